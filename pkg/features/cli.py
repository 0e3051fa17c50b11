"""
Command-Line Module

Argument parsing for the subcommands and resolution of the effective
parameters: command-line flag, then --config file, then environment
(.env included), then the built-in defaults of the config module.
"""

import argparse
import sys
from typing import Dict, List, Optional

from . import config as cfg
from .commands import COMMAND_NAMES, PipelineConfig, handle_command
from .core import AgeGrid, TransformSpec
from .curve import LoessSpec
from .errors import AgingCurveError, ConfigError
from .logger import logger
from .mi import MiConfig
from .sim import DropoutSpec, Mechanism

# flag name -> (type, default from the environment layer)
PARAMETERS = {
    "out": (str, cfg.OUTPUT_DIR),
    "batting": (str, cfg.BATTING_PATH),
    "people": (str, cfg.PEOPLE_PATH),
    "fit": (str, cfg.FIT_PATH),
    "panel": (str, ""),
    "seed": (int, cfg.SEED),
    "m": (int, cfg.M_IMPUTATIONS),
    "iters": (int, cfg.N_ITER),
    "mechanism": (str, cfg.MECHANISM),
    "threshold": (float, cfg.THRESHOLD),
    "retire_prob": (float, cfg.RETIRE_PROB),
    "retire_age": (int, cfg.RETIRE_AGE),
    "span": (float, cfg.SPAN),
    "degree": (int, cfg.DEGREE),
    "min_pa": (int, cfg.MIN_PA),
    "min_debut": (int, cfg.MIN_DEBUT),
    "age_min": (int, cfg.AGE_MIN),
    "age_max": (int, cfg.AGE_MAX),
    "threads": (int, cfg.THREADS),
    "n_players": (int, cfg.N_PLAYERS),
    "level": (float, cfg.LEVEL),
    "scale_min": (float, cfg.SCALE_MIN),
    "scale_max": (float, cfg.SCALE_MAX),
    "lmm_max_iter": (int, cfg.LMM_MAX_ITER),
    "lmm_tol": (float, cfg.LMM_TOL),
}

HELP = {
    "out": "output directory",
    "batting": "Lahman Batting.csv",
    "people": "Lahman People.csv",
    "fit": "LMM fit file (key=value) used as the generative model",
    "panel": "career panel CSV (impute, curve, fit)",
    "seed": "root seed of every random stream",
    "m": "number of imputations",
    "iters": "Gibbs iterations per chain",
    "mechanism": "dropout mechanism",
    "threshold": "OPS threshold of the rolling4/early mechanisms",
    "retire_prob": "retirement probability of the random30 mechanism",
    "retire_age": "retirement age of the random30 mechanism",
    "span": "loess span in (0, 1]",
    "degree": "loess local polynomial degree (1 or 2)",
    "min_pa": "minimum plate appearances per season",
    "min_debut": "earliest debut year kept",
    "age_min": "first age of the career grid",
    "age_max": "last age of the career grid",
    "threads": "worker threads for the imputation chains",
    "n_players": "number of simulated players",
    "level": "confidence level of the pooled intervals",
    "scale_min": "lower end of the OPS scaling range",
    "scale_max": "upper end of the OPS scaling range",
    "lmm_max_iter": "EM iteration cap of the mixed-model fit",
    "lmm_tol": "relative log-likelihood tolerance of the mixed-model fit",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dotenv-format file of AGECURVE_* parameters")
    for name, (kind, _) in PARAMETERS.items():
        kwargs = {"type": kind, "default": None, "help": HELP[name]}
        if name == "mechanism":
            kwargs["choices"] = [m.value for m in Mechanism]
        common.add_argument(f"--{name.replace('_', '-')}", dest=name, **kwargs)

    parser = argparse.ArgumentParser(
        prog="agecurve",
        description="Aging curves under player dropout: simulation study and MLB application",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    descriptions = {
        "fit": "fit the cubic random-intercept model",
        "simulate": "simulate careers and apply dropout",
        "impute": "multiply impute the MISSING cells of a panel",
        "curve": "loess aging curve of a panel",
        "pipeline-sim": "full simulation study",
        "pipeline-mlb": "full MLB application",
    }
    for name in COMMAND_NAMES:
        sub.add_parser(name, parents=[common], help=descriptions[name])
    return parser


def resolve_params(args: argparse.Namespace) -> Dict[str, object]:
    """Merge flag > config file > environment > default into typed values"""
    from_file = cfg.load_config_file(args.config) if args.config else {}
    params: Dict[str, object] = {}
    for name, (kind, default) in PARAMETERS.items():
        value = getattr(args, name, None)
        if value is None and name in from_file:
            try:
                value = kind(from_file[name])
            except ValueError:
                raise ConfigError(f"config file value {name}={from_file[name]!r} is not a valid {kind.__name__}")
        params[name] = default if value is None else value
    return params


def build_config(command: str, params: Dict[str, object]) -> PipelineConfig:
    return PipelineConfig(
        command=command,
        out=params["out"],
        batting=params["batting"],
        people=params["people"],
        fit=params["fit"],
        panel=params["panel"],
        seed=params["seed"],
        n_players=params["n_players"],
        min_pa=params["min_pa"],
        min_debut=params["min_debut"],
        threads=params["threads"],
        level=params["level"],
        lmm_max_iter=params["lmm_max_iter"],
        lmm_tol=params["lmm_tol"],
        mi=MiConfig(m=params["m"], n_iter=params["iters"], seed=params["seed"]),
        dropout=DropoutSpec(
            mechanism=Mechanism.parse(params["mechanism"]),
            threshold=params["threshold"],
            retire_prob=params["retire_prob"],
            retire_age=params["retire_age"],
        ),
        loess=LoessSpec(span=params["span"], degree=params["degree"]),
        transform=TransformSpec(scale_min=params["scale_min"], scale_max=params["scale_max"]),
        grid=AgeGrid(params["age_min"], params["age_max"]),
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args.command, resolve_params(args))
    except AgingCurveError as e:
        logger.error(f"❌ Invalid configuration: {e}")
        return e.exit_code
    return handle_command(config)


def run_cli(argv: Optional[List[str]] = None) -> None:
    try:
        code = main(argv)
    except KeyboardInterrupt:
        print("\n🛑 Stopped by user")
        code = 130
    sys.exit(code)

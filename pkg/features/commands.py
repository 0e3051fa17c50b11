"""
Command Handling Module

This module contains the handlers behind every subcommand: the two full
pipelines (simulation study and MLB application) and the stand-alone
fit / simulate / impute / curve steps. Each handler writes its artifacts
into the output directory together with a manifest that re-runs it.
"""

import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .config import REFERENCE_FIT_PATH, RUN_START_TIME, get_readable_time, write_manifest
from .core import FLOAT_FORMAT, AgeGrid, CareerPanel, TransformSpec, inverse_transform_ops, read_panel, write_panel
from .curve import AgingCurve, CurveUse, LoessSpec, curve_mae, curves_frame, panel_to_curve, peak_age
from .diag import density_frame, kde, ks_distance, trace_stats
from .errors import AgingCurveError, ConfigError, NumericError
from .ingest import build_panel, load_lahman
from .lmm import LmmFit, fit_lmm, load_fit, save_fit, with_grid
from .logger import logger
from .mi import ImputationRun, MiConfig, impute
from .pool import pool_curve
from .sim import STREAM_DROPOUT, STREAM_SIMULATE, DropoutSpec, Mechanism, SeededRng, apply_dropout, simulate_careers
from .svg import curves_chart, line_chart

COMMAND_NAMES = ("fit", "simulate", "impute", "curve", "pipeline-sim", "pipeline-mlb")
FAILED_MARKER = "FAILED"
MANIFEST_NAME = "manifest.env"
RUN_LOG_NAME = "run.log"
LATE_CAREER_AGES = (33, 39)


@dataclass
class PipelineConfig:
    command: str
    out: str = "output"
    batting: str = ""
    people: str = ""
    fit: str = ""
    panel: str = ""
    seed: int = 2022
    n_players: int = 1000
    min_pa: int = 100
    min_debut: int = 1985
    threads: int = 1
    level: float = 0.95
    lmm_max_iter: int = 500
    lmm_tol: float = 1e-8
    mi: MiConfig = field(default_factory=MiConfig)
    dropout: DropoutSpec = field(default_factory=DropoutSpec)
    loess: LoessSpec = field(default_factory=LoessSpec)
    transform: TransformSpec = field(default_factory=TransformSpec)
    grid: AgeGrid = field(default_factory=AgeGrid)

    def __post_init__(self):
        if self.command not in COMMAND_NAMES:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.n_players < 1:
            raise ConfigError(f"n_players must be >= 1, got {self.n_players}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if self.mi.seed != self.seed:
            raise ConfigError("imputation seed must equal the root seed")

    def to_params(self) -> Dict[str, str]:
        """Every parameter in manifest form; reading it back reproduces the run"""
        return {
            "command": self.command,
            "out": self.out,
            "batting": self.batting,
            "people": self.people,
            "fit": self.fit,
            "panel": self.panel,
            "seed": str(self.seed),
            "n_players": str(self.n_players),
            "min_pa": str(self.min_pa),
            "min_debut": str(self.min_debut),
            "threads": str(self.threads),
            "level": repr(self.level),
            "lmm_max_iter": str(self.lmm_max_iter),
            "lmm_tol": repr(self.lmm_tol),
            "m": str(self.mi.m),
            "iters": str(self.mi.n_iter),
            "mechanism": self.dropout.mechanism.value,
            "threshold": repr(self.dropout.threshold),
            "retire_prob": repr(self.dropout.retire_prob),
            "retire_age": str(self.dropout.retire_age),
            "span": repr(self.loess.span),
            "degree": str(self.loess.degree),
            "scale_min": repr(self.transform.scale_min),
            "scale_max": repr(self.transform.scale_max),
            "age_min": str(self.grid.min_age),
            "age_max": str(self.grid.max_age),
        }


# -------------------------
# Stage tracking and artifact helpers
# -------------------------
class _Run:
    """Output directory, current stage and stage timings of one command"""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.stage = "setup"

    def path(self, name: str) -> str:
        return os.path.join(self.config.out, name)

    @contextmanager
    def step(self, name: str):
        self.stage = name
        started = time.monotonic()
        logger.log(f"🔄 Stage {name} started")
        try:
            yield
        except AgingCurveError as e:
            e.stage = name
            raise
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            raise NumericError(str(e), stage=name) from e
        logger.log(f"✅ Stage {name} done in {get_readable_time(time.monotonic() - started)}")

    def write_frame(self, frame: pd.DataFrame, name: str) -> str:
        target = self.path(name)
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n", encoding="utf-8")
        return target

    def write_text(self, text: str, name: str) -> str:
        target = self.path(name)
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return target

    def write_panel(self, panel: CareerPanel, name: str) -> str:
        target = self.path(name)
        write_panel(panel, target)
        return target

    def write_curve(self, curve: AgingCurve, name: str) -> str:
        return self.write_frame(curve.to_frame(), name)


def _report(values: Dict[str, object]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = FLOAT_FORMAT % value
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _load_panel_from_lahman(config: PipelineConfig) -> CareerPanel:
    if not config.batting or not config.people:
        raise ConfigError("--batting and --people are both required")
    warnings: List[str] = []
    batting, people = load_lahman(config.batting, config.people, warnings)
    return build_panel(
        batting,
        people,
        grid=config.grid,
        min_pa=config.min_pa,
        min_debut=config.min_debut,
        spec=config.transform,
        warnings=warnings,
    )


def _resolve_fit(run: _Run) -> LmmFit:
    """Generative fit: --fit file, else a fit on the Lahman files, else the bundled reference fit"""
    config = run.config
    if config.fit:
        fit = load_fit(config.fit)
        logger.log(f"📂 Loaded LMM fit from {config.fit}")
    elif config.batting or config.people:
        panel = _load_panel_from_lahman(config)
        fit = fit_lmm(panel, max_iter=config.lmm_max_iter, tol=config.lmm_tol)
    else:
        fit = load_fit(REFERENCE_FIT_PATH)
        logger.log(f"📂 Loaded reference LMM fit from {REFERENCE_FIT_PATH}")
    return with_grid(fit, config.grid)


def _run_imputation(run: _Run, panel: CareerPanel, prefix: str) -> ImputationRun:
    config = run.config
    result = impute(panel, config.mi, threads=config.threads)
    for i, completed in enumerate(result.completed, start=1):
        run.write_panel(completed, f"{prefix}_imp_{i}.csv")
    stats = trace_stats(result)
    run.write_frame(stats.table, "traces.csv")
    run.write_text(stats.summary_text(), "traces_summary.txt")
    logger.log(f"📊 Mixing scores: mean {stats.mixing_mean:.4f}, sd {stats.mixing_sd:.4f}")
    traces = result.traces_frame()
    for column in ("imputed_mean", "imputed_sd"):
        series = {
            f"chain {c}": (group["iteration"].to_numpy(), group[column].to_numpy())
            for c, group in traces.groupby("chain")
        }
        line_chart(run.path(f"traces_{column}.svg"), series, title=column.replace("_", " "),
                   xlabel="iteration", ylabel=column)
    return result


def _imputed_curves(run: _Run, result: ImputationRun) -> List[AgingCurve]:
    curves = []
    for i, completed in enumerate(result.completed, start=1):
        curve = panel_to_curve(completed, run.config.loess, CurveUse.ALL)
        run.write_curve(curve, f"curve_imp_{i}.csv")
        curves.append(curve)
    return curves


def _write_densities(run: _Run, observed: np.ndarray, result: ImputationRun) -> None:
    """KDE of observed vs each chain's imputed values, in transformed and OPS units"""
    tspec = run.config.transform
    scales = {
        "transformed": lambda v: v,
        "ops": lambda v: inverse_transform_ops(np.clip(v, 0.0, np.pi / 2), tspec),
    }
    for scale, convert in scales.items():
        densities = {"observed": kde(convert(observed))}
        for i in range(result.m):
            densities[f"imp_{i + 1}"] = kde(convert(result.imputed_values(i)))
        run.write_frame(density_frame(densities), f"kde_{scale}.csv")
        series = {name: (d.grid, d.density) for name, d in densities.items()}
        line_chart(run.path(f"kde_{scale}.svg"), series, title=f"density ({scale})",
                   xlabel="OPS" if scale == "ops" else "transformed OPS", ylabel="density")


# -------------------------
# Command handlers
# -------------------------
def cmd_fit(run: _Run) -> None:
    config = run.config
    with run.step("ingest"):
        if config.panel:
            panel = read_panel(config.panel, grid=config.grid, transform=config.transform)
        else:
            panel = _load_panel_from_lahman(config)
    with run.step("fit"):
        fit = fit_lmm(panel, max_iter=config.lmm_max_iter, tol=config.lmm_tol)
        save_fit(fit, run.path("lmm_fit.txt"))


def cmd_simulate(run: _Run) -> None:
    config = run.config
    root = SeededRng(config.seed)
    with run.step("fit"):
        fit = _resolve_fit(run)
        save_fit(fit, run.path("lmm_fit.txt"))
    with run.step("simulate"):
        full = simulate_careers(fit, config.n_players, config.grid, root.substream(STREAM_SIMULATE))
        full = replace(full, transform=config.transform)
        run.write_panel(full, "panel_true.csv")
    with run.step("dropout"):
        dropped = apply_dropout(full, config.dropout, config.transform, root.substream(STREAM_DROPOUT))
        run.write_panel(dropped, "panel_dropout.csv")
        meta = {
            "mechanism": config.dropout.mechanism.value,
            "threshold": config.dropout.threshold,
            "retire_prob": config.dropout.retire_prob,
            "retire_age": config.dropout.retire_age,
            "seed": config.seed,
            "stream": STREAM_DROPOUT,
        }
        run.write_text(json.dumps(meta, sort_keys=True) + "\n", "panel_dropout.meta.json")


def cmd_impute(run: _Run) -> None:
    config = run.config
    if not config.panel:
        raise ConfigError("impute needs --panel")
    with run.step("ingest"):
        panel = read_panel(config.panel, grid=config.grid, transform=config.transform)
    with run.step("impute"):
        _run_imputation(run, panel, "panel")


def cmd_curve(run: _Run) -> None:
    config = run.config
    if not config.panel:
        raise ConfigError("curve needs --panel")
    with run.step("ingest"):
        panel = read_panel(config.panel, grid=config.grid, transform=config.transform)
    with run.step("curve"):
        curve = panel_to_curve(panel, config.loess, CurveUse.OBSERVED_ONLY)
        run.write_curve(curve, "curve.csv")
        run.write_curve(curve.to_ops(panel.transform), "curve_ops.csv")
        curves_chart(run.path("curve.svg"), {"loess": curve}, title="aging curve")
        logger.log(f"📈 Curve peaks at age {peak_age(curve)}")


def cmd_pipeline_sim(run: _Run) -> None:
    """fit -> simulate -> dropout (all mechanisms) -> impute -> curves -> pool -> diagnostics"""
    config = run.config
    root = SeededRng(config.seed)

    with run.step("fit"):
        fit = _resolve_fit(run)
        save_fit(fit, run.path("lmm_fit.txt"))

    with run.step("simulate"):
        full = simulate_careers(fit, config.n_players, config.grid, root.substream(STREAM_SIMULATE))
        full = replace(full, transform=config.transform)
        run.write_panel(full, "panel_true.csv")
        true_curve = panel_to_curve(full, config.loess, CurveUse.ALL)
        run.write_curve(true_curve, "curve_true.csv")

    with run.step("dropout"):
        survivor_curves: Dict[str, AgingCurve] = {}
        comparison = []
        chosen: Optional[CareerPanel] = None
        for mech in Mechanism:
            spec = DropoutSpec(
                mechanism=mech,
                threshold=config.dropout.threshold,
                retire_prob=config.dropout.retire_prob,
                retire_age=config.dropout.retire_age,
            )
            panel = apply_dropout(full, spec, config.transform, root.substream(STREAM_DROPOUT))
            curve = panel_to_curve(panel, config.loess, CurveUse.OBSERVED_ONLY)
            survivor_curves[mech.value] = curve
            comparison.append({
                "mechanism": mech.value,
                "mae": curve_mae(curve, true_curve),
                "dropped_players": int(np.sum(~panel.observed.all(axis=1))),
                "missing_cells": panel.n_missing,
            })
            if mech is config.dropout.mechanism:
                chosen = panel
        run.write_frame(pd.DataFrame(comparison, columns=["mechanism", "mae", "dropped_players", "missing_cells"]),
                        "dropout_comparison.csv")
        curves_chart(run.path("dropout_comparison.svg"), {"true": true_curve, **survivor_curves},
                     title="survivor curves by dropout mechanism")
        run.write_panel(chosen, "panel_dropout.csv")
        survivor = survivor_curves[config.dropout.mechanism.value]
        run.write_curve(survivor, "curve_survivor.csv")

    with run.step("impute"):
        result = _run_imputation(run, chosen, "panel")

    with run.step("curve"):
        imputed = _imputed_curves(run, result)

    with run.step("pool"):
        pooled = pool_curve(imputed, config.level)
        run.write_curve(pooled, "curve_pooled.csv")
        run.write_curve(pooled.to_ops(config.transform), "curve_pooled_ops.csv")
        per_imputation = {f"imp_{i + 1}": c for i, c in enumerate(imputed)}
        wide = curves_frame({"true": true_curve, "survivor": survivor, "pooled": pooled, **per_imputation})
        run.write_frame(wide, "curves.csv")
        curves_chart(run.path("curves.svg"),
                     {**per_imputation, "true": true_curve, "survivor": survivor, "pooled imputed": pooled},
                     title=f"aging curves ({config.dropout.mechanism.value} dropout)", band="pooled imputed",
                     faint=per_imputation)

    with run.step("diagnostics"):
        masked = ~chosen.observed
        observed_values = chosen.values[chosen.observed]
        _write_densities(run, observed_values, result)
        imputed_all = np.concatenate([result.imputed_values(i) for i in range(result.m)])
        ks = ks_distance(imputed_all, full.values[masked])
        mae_survivor = curve_mae(survivor, true_curve)
        mae_pooled = curve_mae(pooled, true_curve)
        report = {
            "mechanism": config.dropout.mechanism.value,
            "mae_survivor": mae_survivor,
            "mae_pooled": mae_pooled,
            "ks_imputed_vs_true": ks,
            "peak_true": peak_age(true_curve),
            "peak_survivor": peak_age(survivor),
            "peak_pooled": peak_age(pooled),
        }
        run.write_text(_report(report), "mae_report.txt")
        logger.log(f"📊 MAE survivor {mae_survivor:.5f}, pooled imputed {mae_pooled:.5f}, KS {ks:.4f}")


def cmd_pipeline_mlb(run: _Run) -> None:
    """ingest -> impute -> curves with and without imputation -> pooled curve"""
    config = run.config

    with run.step("ingest"):
        panel = _load_panel_from_lahman(config)
        run.write_panel(panel, "panel_mlb.csv")
        logger.log(f"⚾ MLB panel: {panel.n_players} players, {panel.n_observed} observed seasons")

    with run.step("curve"):
        observed_curve = panel_to_curve(panel, config.loess, CurveUse.OBSERVED_ONLY)
        run.write_curve(observed_curve, "curve_observed.csv")
        run.write_curve(observed_curve.to_ops(config.transform), "curve_observed_ops.csv")

    with run.step("impute"):
        result = _run_imputation(run, panel, "panel_mlb")

    with run.step("pool"):
        imputed = _imputed_curves(run, result)
        pooled = pool_curve(imputed, config.level)
        run.write_curve(pooled, "curve_pooled.csv")
        run.write_curve(pooled.to_ops(config.transform), "curve_pooled_ops.csv")
        per_imputation = {f"imp_{i + 1}": c for i, c in enumerate(imputed)}
        curves_chart(run.path("curves.svg"),
                     {**per_imputation, "observed only": observed_curve, "pooled imputed": pooled},
                     title="MLB aging curves", band="pooled imputed", faint=per_imputation)
        curves_chart(run.path("curves_ops.svg"),
                     {**{name: c.to_ops(config.transform) for name, c in per_imputation.items()},
                      "observed only": observed_curve.to_ops(config.transform),
                      "pooled imputed": pooled.to_ops(config.transform)},
                     title="MLB aging curves (OPS)", band="pooled imputed", faint=per_imputation)

        ages = config.grid.ages
        late = (ages >= LATE_CAREER_AGES[0]) & (ages <= LATE_CAREER_AGES[1])
        late_gap = float(np.mean(observed_curve.mean[late] - pooled.mean[late])) if late.any() else float("nan")
        report = {
            "players": panel.n_players,
            "observed_cells": panel.n_observed,
            "missing_cells": panel.n_missing,
            "peak_observed": peak_age(observed_curve),
            "peak_pooled": peak_age(pooled),
            "late_career_gap": late_gap,
        }
        run.write_text(_report(report), "mlb_report.txt")


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "impute": cmd_impute,
    "curve": cmd_curve,
    "pipeline-sim": cmd_pipeline_sim,
    "pipeline-mlb": cmd_pipeline_mlb,
}


def run_pipeline_sim(config: PipelineConfig) -> int:
    return handle_command(replace(config, command="pipeline-sim"))


def run_pipeline_mlb(config: PipelineConfig) -> int:
    return handle_command(replace(config, command="pipeline-mlb"))


def handle_command(config: PipelineConfig) -> int:
    """Run one command; returns the process exit code"""
    try:
        os.makedirs(config.out, exist_ok=True)
    except OSError as e:
        logger.error(f"❌ Cannot create output directory {config.out}: {e}")
        return ConfigError.exit_code

    run = _Run(config)
    marker = run.path(FAILED_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    logger.set_sink(run.path(RUN_LOG_NAME))
    write_manifest(run.path(MANIFEST_NAME), config.to_params())
    started = time.monotonic()
    logger.log(f"🚀 Running {config.command} (seed {config.seed}) into {config.out}")

    logger.start_capturing()
    try:
        COMMANDS[config.command](run)
    except AgingCurveError as e:
        return _fail(run, e.stage, str(e), e.exit_code)
    except Exception as e:
        return _fail(run, run.stage, f"{type(e).__name__}: {e}", NumericError.exit_code)
    finally:
        logger.stop_capturing()
        logger.flush()

    uptime = (datetime.now(timezone.utc) - RUN_START_TIME).total_seconds()
    logger.log(f"✅ {config.command} finished in {get_readable_time(time.monotonic() - started)}"
               f" (process up {get_readable_time(uptime)})")
    logger.flush()
    return 0


def _fail(run: _Run, stage: str, message: str, code: int) -> int:
    logger.error(f"❌ Stage {stage} failed: {message}")
    with open(run.path(FAILED_MARKER), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"stage={stage}\nmessage={message}\nexit_code={code}\n")
    logger.flush()
    return code

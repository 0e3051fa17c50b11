"""
Career Simulation Module

Generates full synthetic careers from a fitted mixed model and applies the
three dropout mechanisms: a trailing 4-year OPS average below a threshold,
a low early-career (21-25) OPS average, and random retirement at a fixed age.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .core import HALF_PI, AgeGrid, CareerPanel, TransformSpec, inverse_transform_ops
from .errors import ConfigError, NumericError
from .lmm import LmmFit, predict_curve
from .logger import logger

# Named substreams under the root seed
STREAM_SIMULATE = 1
STREAM_DROPOUT = 2
STREAM_IMPUTE = 3


@dataclass(frozen=True)
class SeededRng:
    """Root seed plus a stream id; generator(*keys) derives an independent substream"""
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ConfigError("seed and stream_id must be non-negative")

    def generator(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.stream_id, *keys]))

    def substream(self, stream_id: int) -> "SeededRng":
        return SeededRng(self.seed, stream_id)


class Mechanism(enum.Enum):
    ROLLING4 = "rolling4"
    EARLY_CAREER = "early"
    RANDOM_AT_30 = "random30"

    @classmethod
    def parse(cls, text: str) -> "Mechanism":
        for mech in cls:
            if text.lower() in (mech.value, mech.name.lower()):
                return mech
        raise ConfigError(f"unknown dropout mechanism {text!r} (choose rolling4, early or random30)")


@dataclass(frozen=True)
class DropoutSpec:
    mechanism: Mechanism = Mechanism.EARLY_CAREER
    threshold: float = 0.55
    retire_prob: float = 0.25
    retire_age: int = 30
    window: int = 4
    early_last_age: int = 25

    def __post_init__(self):
        if self.threshold < 0:
            raise ConfigError(f"dropout threshold must be non-negative, got {self.threshold}")
        if not 0.0 <= self.retire_prob <= 1.0:
            raise ConfigError(f"retire_prob must lie in [0, 1], got {self.retire_prob}")
        if self.window < 1:
            raise ConfigError("rolling window must cover at least one season")


def simulate_careers(fit: LmmFit, n_players: int, grid: AgeGrid, rng: SeededRng) -> CareerPanel:
    """Fully observed careers drawn from the fitted random-intercept model"""
    if not fit.converged:
        raise NumericError("simulate_careers needs a converged fit")
    if n_players < 1:
        raise NumericError("simulate_careers needs at least one player")

    mean_curve = predict_curve(fit, grid.ages)
    tau, sigma = np.sqrt(fit.tau2), np.sqrt(fit.sigma2)
    values = np.empty((n_players, len(grid)))
    for p in range(n_players):
        gen = rng.generator(p)
        intercept = tau * gen.standard_normal()
        noise = sigma * gen.standard_normal(len(grid))
        values[p] = mean_curve + intercept + noise
    np.clip(values, 0.0, HALF_PI, out=values)

    width = max(4, len(str(n_players)))
    players = [f"sim{p + 1:0{width}d}" for p in range(n_players)]
    return CareerPanel(
        players=players,
        grid=grid,
        values=values,
        observed=np.ones_like(values, dtype=bool),
    )


def apply_dropout(panel: CareerPanel, spec: DropoutSpec, tspec: TransformSpec, rng: SeededRng) -> CareerPanel:
    """Mask every season after a player's dropout point; observed values are untouched"""
    if panel.n_missing:
        raise NumericError("apply_dropout needs a fully observed panel")

    ages = panel.grid.ages
    n_players, n_ages = panel.values.shape
    # first masked column per player; n_ages means the player never drops out
    cut = np.full(n_players, n_ages)

    if spec.mechanism is Mechanism.RANDOM_AT_30:
        retire_col = int(np.searchsorted(ages, spec.retire_age))
        for p in range(n_players):
            if rng.generator(p).random() < spec.retire_prob:
                cut[p] = retire_col
    else:
        ops = inverse_transform_ops(panel.values, tspec)
        if spec.mechanism is Mechanism.EARLY_CAREER:
            early = ages <= spec.early_last_age
            if not early.any():
                raise NumericError(f"grid has no ages up to {spec.early_last_age}")
            below = ops[:, early].mean(axis=1) < spec.threshold
            cut[below] = int(early.sum())
        else:
            w = spec.window
            if n_ages >= w:
                csum = np.cumsum(np.pad(ops, ((0, 0), (1, 0))), axis=1)
                # trailing means ending at columns w-1 .. n_ages-1
                means = (csum[:, w:] - csum[:, :-w]) / w
                below = means < spec.threshold
                hit = below.any(axis=1)
                first_end = below.argmax(axis=1) + (w - 1)
                cut[hit] = first_end[hit] + 1

    observed = np.arange(n_ages)[None, :] < cut[:, None]
    dropped = int(np.sum(cut < n_ages))
    logger.log(
        f"🔧 Dropout {spec.mechanism.value}: {dropped} of {n_players} players leave early, "
        f"{int((~observed).sum())} cells masked"
    )
    return panel.replace(observed=observed)

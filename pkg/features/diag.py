"""
Diagnostics Module

Density comparison of imputed against observed values and the per-chain
trace statistics of an imputation run, with a scalar mixing score.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, stats

from .errors import NumericError
from .mi import ImputationRun

KDE_POINTS = 512
KDE_PAD = 3.0
MIXING_WINDOW = 10
# variances below this fraction of max(1, mean^2) are rounding noise
ROUNDING_VAR = 1e-24


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(integrate.trapezoid(self.density, self.grid))


def silverman_bandwidth(values: np.ndarray) -> float:
    """0.9 * min(sd, IQR / 1.34) * n^(-1/5); falls back to sd when the IQR is zero"""
    sd = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * values.size ** (-0.2)


def kde(values: Sequence[float], grid: Optional[Sequence[float]] = None) -> DensityEstimate:
    """Gaussian kernel density estimate with Silverman's rule bandwidth"""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if np.unique(x).size < 2:
        raise NumericError("kde needs at least two distinct values (zero bandwidth)")

    bw = silverman_bandwidth(x)
    sd = float(np.std(x, ddof=1))
    # gaussian_kde scales its factor by the sample sd
    estimator = stats.gaussian_kde(x, bw_method=bw / sd)
    if grid is None:
        grid = np.linspace(x.min() - KDE_PAD * bw, x.max() + KDE_PAD * bw, KDE_POINTS)
    grid = np.asarray(grid, dtype=float)
    return DensityEstimate(grid=grid, density=estimator(grid), bandwidth=bw)


def density_frame(densities: Dict[str, DensityEstimate]) -> pd.DataFrame:
    """Long table x,density,source"""
    parts = [
        pd.DataFrame({"x": d.grid, "density": d.density, "source": name})
        for name, d in densities.items()
    ]
    return pd.concat(parts, ignore_index=True)


def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise NumericError("ks_distance needs two nonempty samples")
    return float(stats.ks_2samp(a, b).statistic)


def mixing_score(trace: np.ndarray, window: int = MIXING_WINDOW) -> float:
    """Between-chain variance over total variance of the last `window` iterations"""
    tail = np.asarray(trace, dtype=float)[:, -window:]
    noise = ROUNDING_VAR * max(1.0, float(np.mean(tail)) ** 2)
    total = float(tail.var())
    between = float(tail.mean(axis=1).var())
    if total <= noise or between <= noise:
        return 0.0
    return min(between / total, 1.0)


@dataclass
class TraceStats:
    table: pd.DataFrame
    mixing_mean: float
    mixing_sd: float

    def summary_text(self) -> str:
        return f"mixing_mean={self.mixing_mean:.12g}\nmixing_sd={self.mixing_sd:.12g}\n"


def trace_stats(run: ImputationRun, window: int = MIXING_WINDOW) -> TraceStats:
    if run.m == 0 or run.trace_mean.size == 0:
        raise NumericError("trace_stats needs a nonempty imputation run")
    return TraceStats(
        table=run.traces_frame(),
        mixing_mean=mixing_score(run.trace_mean, window),
        mixing_sd=mixing_score(run.trace_sd, window),
    )

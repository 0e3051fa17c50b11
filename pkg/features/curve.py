"""
Aging Curve Module

Loess smoothing of pooled (age, value) cells into aging curves, pointwise
standard errors from the linear-smoother hat vectors, and curve comparison.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .core import HALF_PI, AgeGrid, CareerPanel, TransformSpec, inverse_transform_ops
from .errors import ConfigError, NumericError
from .logger import logger

# local systems worse conditioned than this drop one polynomial degree
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class AgingCurve:
    grid: AgeGrid
    mean: np.ndarray
    se: Optional[np.ndarray] = None
    ci_low: Optional[np.ndarray] = None
    ci_high: Optional[np.ndarray] = None
    units: str = "transformed"
    pooled: tuple = field(default=(), repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.shape != (len(self.grid),):
            raise NumericError(f"curve has {mean.size} values for a {len(self.grid)}-age grid")
        if not np.all(np.isfinite(mean)):
            raise NumericError("curve holds a non-finite value")
        object.__setattr__(self, "mean", mean)
        for name in ("se", "ci_low", "ci_high"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"age": self.grid.ages, "estimate": self.mean})
        if self.se is not None:
            frame["se"] = self.se
        if self.ci_low is not None:
            frame["ci_low"] = self.ci_low
            frame["ci_high"] = self.ci_high
        return frame

    def to_ops(self, spec: TransformSpec) -> "AgingCurve":
        """Same curve in OPS units; se through the delta method"""
        if self.units == "ops":
            return self
        y = np.clip(self.mean, 0.0, HALF_PI)
        se = None
        if self.se is not None:
            se = (spec.scale_max - spec.scale_min) * np.abs(np.sin(2 * y)) * self.se
        ci_low = ci_high = None
        if self.ci_low is not None:
            ci_low = inverse_transform_ops(np.clip(self.ci_low, 0.0, HALF_PI), spec)
            ci_high = inverse_transform_ops(np.clip(self.ci_high, 0.0, HALF_PI), spec)
        return AgingCurve(
            grid=self.grid,
            mean=inverse_transform_ops(y, spec),
            se=se,
            ci_low=ci_low,
            ci_high=ci_high,
            units="ops",
        )


@dataclass(frozen=True)
class LoessSpec:
    span: float = 0.75
    degree: int = 2

    def __post_init__(self):
        if not 0.0 < self.span <= 1.0:
            raise ConfigError(f"loess span must lie in (0, 1], got {self.span}")
        if self.degree not in (1, 2):
            raise ConfigError(f"loess degree must be 1 or 2, got {self.degree}")


@dataclass
class LoessFit:
    fitted: np.ndarray
    se: np.ndarray
    residual_var: float
    trace: float
    warnings: List[str] = field(default_factory=list)


class CurveUse(enum.Enum):
    OBSERVED_ONLY = "observed"
    ALL = "all"


# -------------------------
# Loess
# -------------------------
def tricube(u: np.ndarray) -> np.ndarray:
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 3) ** 3


def _local_weights(x: np.ndarray, x0: float, q: int) -> np.ndarray:
    """Tricube weights over the q nearest points; ties at the window edge are all included"""
    d = np.abs(x - x0)
    d_max = np.partition(d, q - 1)[q - 1]
    if d_max <= 0:
        return (d == 0).astype(float)
    w = np.zeros_like(d)
    inside = d <= d_max
    w[inside] = tricube(d[inside] / d_max)
    return w


def _hat_vector(x: np.ndarray, x0: float, q: int, degree: int, notes: List[str]) -> np.ndarray:
    """Row l of the smoother: fitted(x0) = l @ y"""
    w = _local_weights(x, x0, q)
    idx = np.nonzero(w > 0)[0]
    dx = x[idx] - x0
    wi = w[idx]
    for deg in range(degree, -1, -1):
        Z = np.vander(dx, deg + 1, increasing=True)
        M = Z.T @ (wi[:, None] * Z)
        if np.linalg.cond(M) < MAX_CONDITION:
            coef = linalg.solve(M, (Z * wi[:, None]).T, assume_a="pos")
            row = np.zeros_like(x)
            row[idx] = coef[0]
            if deg < degree:
                notes.append(f"singular local system at x={x0:g}: degree reduced to {deg}")
            return row
    raise NumericError(f"loess window at x={x0:g} holds no usable points")


def fit_loess(points, spec: LoessSpec, eval_grid: Sequence[float]) -> LoessFit:
    """Local polynomial regression with tricube weights, evaluated on eval_grid"""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise NumericError("fit_loess expects (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    n = x.size
    unique_x, inverse = np.unique(x, return_inverse=True)
    if unique_x.size < spec.degree + 2:
        raise NumericError(f"fit_loess needs >= {spec.degree + 2} distinct x values, got {unique_x.size}")
    q = min(n, int(math.ceil(spec.span * n)))
    if q < spec.degree + 1:
        raise NumericError(f"span {spec.span} leaves {q} points per window; need >= {spec.degree + 1}")

    notes: List[str] = []
    rows: Dict[float, np.ndarray] = {}

    def row_at(x0: float) -> np.ndarray:
        if x0 not in rows:
            rows[x0] = _hat_vector(x, x0, q, spec.degree, notes)
        return rows[x0]

    # smoother at the data points, grouped by distinct x
    fitted_data = np.empty(n)
    trace = 0.0
    for k, u in enumerate(unique_x):
        l_u = row_at(float(u))
        members = inverse == k
        fitted_data[members] = l_u @ y
        trace += float(l_u[members].sum())
    rss = float(np.sum((y - fitted_data) ** 2))
    dof = n - trace
    residual_var = rss / dof if dof > 0 else 0.0

    grid = np.asarray(eval_grid, dtype=float)
    fitted = np.empty(grid.size)
    se = np.empty(grid.size)
    for j, x0 in enumerate(grid):
        l_row = row_at(float(x0))
        fitted[j] = l_row @ y
        se[j] = math.sqrt(residual_var * float(l_row @ l_row))

    warnings = list(dict.fromkeys(notes))
    for note in warnings:
        logger.warning(f"⚠️ loess: {note}")
    return LoessFit(fitted=fitted, se=se, residual_var=residual_var, trace=trace, warnings=warnings)


# -------------------------
# Curves from panels
# -------------------------
def panel_points(panel: CareerPanel, use: CurveUse = CurveUse.OBSERVED_ONLY) -> np.ndarray:
    if use is CurveUse.ALL:
        if panel.n_missing:
            raise NumericError("curve over ALL cells needs a panel without MISSING cells")
        eligible = np.ones_like(panel.observed)
    else:
        eligible = panel.observed
    # interior ages without cells are bridged by the smoother; the ends are not extrapolated
    counts = eligible.sum(axis=0)
    empty = [int(panel.grid.ages[j]) for j in sorted({0, len(counts) - 1}) if counts[j] == 0]
    if empty:
        raise NumericError(f"no eligible cells at age(s) {empty}")
    rows, cols = np.nonzero(eligible)
    return np.column_stack([panel.grid.ages[cols].astype(float), panel.values[rows, cols]])


def panel_to_curve(panel: CareerPanel, spec: LoessSpec = LoessSpec(),
                   use: CurveUse = CurveUse.OBSERVED_ONLY) -> AgingCurve:
    """Loess curve over every eligible (age, value) cell, evaluated at the integer ages"""
    fit = fit_loess(panel_points(panel, use), spec, panel.grid.ages)
    return AgingCurve(grid=panel.grid, mean=fit.fitted, se=fit.se)


def curve_mae(a: AgingCurve, b: AgingCurve) -> float:
    """Mean absolute difference over the shared grid ages"""
    if a.grid != b.grid:
        raise NumericError("curve_mae needs curves on the same grid")
    if a.units != b.units:
        raise NumericError(f"curve_mae got units {a.units!r} and {b.units!r}")
    return float(np.mean(np.abs(a.mean - b.mean)))


def peak_age(curve: AgingCurve) -> int:
    return int(curve.grid.ages[int(np.argmax(curve.mean))])


def curves_frame(curves: Dict[str, AgingCurve]) -> pd.DataFrame:
    """Wide table age x curve name, for reports"""
    items: List[Tuple[str, AgingCurve]] = list(curves.items())
    frame = pd.DataFrame({"age": items[0][1].grid.ages})
    for name, curve in items:
        frame[name] = curve.mean
    return frame

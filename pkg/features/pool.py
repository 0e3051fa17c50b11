"""
Pooling Module

Rubin's combining rules for m per-imputation estimates and the pointwise
pooling of per-imputation aging curves.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import stats

from .curve import AgingCurve
from .errors import NumericError


@dataclass(frozen=True)
class PooledEstimate:
    q_bar: float
    u_bar: float
    b: float
    t_var: float
    r: float
    nu: float
    ci_low: float
    ci_high: float
    level: float

    @property
    def se(self) -> float:
        return math.sqrt(self.t_var)


def _quantile(level: float, nu: float) -> float:
    p = 1.0 - (1.0 - level) / 2.0
    if math.isinf(nu):
        return float(stats.norm.ppf(p))
    return float(stats.t.ppf(p, nu))


def rubin_pool(q_hats: Sequence[float], u_hats: Sequence[float], level: float = 0.95) -> PooledEstimate:
    """Combine m point estimates and their sampling variances"""
    q = np.asarray(q_hats, dtype=float)
    u = np.asarray(u_hats, dtype=float)
    m = q.size
    if m < 2:
        raise NumericError(f"rubin_pool needs m >= 2 estimates, got {m}")
    if u.size != m:
        raise NumericError(f"got {m} estimates but {u.size} variances")
    if np.any(u < 0):
        raise NumericError("sampling variances must be non-negative")
    if not 0.0 < level < 1.0:
        raise NumericError(f"confidence level must lie in (0, 1), got {level}")

    q_bar = float(q.mean())
    u_bar = float(u.mean())
    b = float(q.var(ddof=1))
    inflation = 1.0 + 1.0 / m
    t_var = u_bar + inflation * b

    if b == 0.0:
        r = 0.0
        nu = math.inf
    elif u_bar == 0.0:
        r = math.inf
        nu = float(m - 1)
    else:
        r = inflation * b / u_bar
        nu = (m - 1) * (1.0 + 1.0 / r) ** 2

    half = _quantile(level, nu) * math.sqrt(t_var)
    return PooledEstimate(
        q_bar=q_bar,
        u_bar=u_bar,
        b=b,
        t_var=t_var,
        r=r,
        nu=nu,
        ci_low=q_bar - half,
        ci_high=q_bar + half,
        level=level,
    )


def pool_curve(curves: List[AgingCurve], level: float = 0.95) -> AgingCurve:
    """Apply Rubin's rules independently at every age of m curves sharing one grid"""
    if len(curves) < 2:
        raise NumericError("pool_curve needs at least two curves")
    first = curves[0]
    for other in curves[1:]:
        if other.grid != first.grid or other.units != first.units:
            raise NumericError("pool_curve needs curves on the same grid and units")
    if any(c.se is None for c in curves):
        raise NumericError("pool_curve needs pointwise standard errors on every curve")

    means = np.vstack([c.mean for c in curves])
    variances = np.vstack([np.square(c.se) for c in curves])
    pooled = [rubin_pool(means[:, j], variances[:, j], level) for j in range(means.shape[1])]
    return AgingCurve(
        grid=first.grid,
        mean=np.array([p.q_bar for p in pooled]),
        se=np.array([p.se for p in pooled]),
        ci_low=np.array([p.ci_low for p in pooled]),
        ci_high=np.array([p.ci_high for p in pooled]),
        units=first.units,
        pooled=tuple(pooled),
    )

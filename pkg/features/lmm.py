"""
Mixed Model Module

Maximum-likelihood fit of the cubic random-intercept model

    y_pq = (b0 + u_p) + b1 x_q + b2 x_q^2 + b3 x_q^3 + e_pq,
    u_p ~ N(0, tau2),  e_pq ~ N(0, sigma2),

with x the age centered at `center` and divided by `scale`. Fitting uses an
EM scheme: a GLS step for the fixed effects given the variance components,
then the closed-form EM updates of tau2 and sigma2 from the posterior moments
of the player intercepts. Only OBSERVED cells enter the likelihood.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from .core import AgeGrid, CareerPanel
from .errors import IngestError, NumericError
from .logger import logger

AGE_CENTER = 30.0
AGE_SCALE = 10.0
TAU2_FLOOR = 1e-12
LOG_2PI = math.log(2 * math.pi)


def age_basis(ages, center: float = AGE_CENTER, scale: float = AGE_SCALE) -> np.ndarray:
    """Design rows (1, x, x^2, x^3) for the centered/scaled ages"""
    x = (np.asarray(ages, dtype=float) - center) / scale
    return np.column_stack([np.ones_like(x), x, x ** 2, x ** 3])


@dataclass(frozen=True)
class LmmFit:
    beta: Tuple[float, float, float, float]
    tau2: float
    sigma2: float
    loglik: float = float("nan")
    n_players: int = 0
    n_obs: int = 0
    converged: bool = True
    boundary: bool = False
    n_iter: int = 0
    center: float = AGE_CENTER
    scale: float = AGE_SCALE
    min_age: int = 21
    max_age: int = 39
    loglik_trace: Tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.beta) != 4:
            raise NumericError("beta must hold four coefficients")
        if self.tau2 < 0 or self.sigma2 < 0:
            raise NumericError(f"negative variance component (tau2={self.tau2}, sigma2={self.sigma2})")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def grid(self) -> AgeGrid:
        return AgeGrid(self.min_age, self.max_age)


def predict_mean(fit: LmmFit, age) -> float:
    """Population curve (player effect zero) at an age of the fit's grid"""
    if not fit.min_age <= age <= fit.max_age:
        raise NumericError(f"age {age} outside the fit's grid {fit.min_age}..{fit.max_age}")
    return float(age_basis([age], fit.center, fit.scale)[0] @ np.asarray(fit.beta))


def predict_curve(fit: LmmFit, ages=None) -> np.ndarray:
    ages = fit.grid.ages if ages is None else ages
    return age_basis(ages, fit.center, fit.scale) @ np.asarray(fit.beta)


# -------------------------
# Sufficient statistics
# -------------------------
class _ObservedCells:
    """Observed cells of a panel flattened for vectorized per-player sums"""

    def __init__(self, panel: CareerPanel, center: float, scale: float):
        rows, cols = np.nonzero(panel.observed)
        keep = np.unique(rows)
        remap = np.full(panel.n_players, -1)
        remap[keep] = np.arange(keep.size)
        self.group = remap[rows]
        self.n_groups = keep.size
        self.y = panel.values[rows, cols]
        self.X = age_basis(panel.grid.ages[cols], center, scale)
        self.n_p = np.bincount(self.group, minlength=self.n_groups).astype(float)
        self.S = np.column_stack([
            np.bincount(self.group, weights=self.X[:, k], minlength=self.n_groups) for k in range(4)
        ])
        self.T = np.bincount(self.group, weights=self.y, minlength=self.n_groups)
        self.XtX = self.X.T @ self.X
        self.Xty = self.X.T @ self.y

    def group_sum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.group, weights=values, minlength=self.n_groups)


def gls_beta(cells: _ObservedCells, tau2: float, sigma2: float) -> np.ndarray:
    """Fixed effects maximizing the marginal likelihood for given variance components"""
    c = tau2 / (sigma2 + cells.n_p * tau2) if tau2 > 0 else np.zeros(cells.n_groups)
    A = cells.XtX - cells.S.T @ (c[:, None] * cells.S)
    b = cells.Xty - cells.S.T @ (c * cells.T)
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"singular GLS system: {e}")


def marginal_loglik(cells: _ObservedCells, beta, tau2: float, sigma2: float) -> float:
    r = cells.y - cells.X @ np.asarray(beta)
    R = cells.group_sum(r)
    SS = cells.group_sum(r * r)
    d = sigma2 + cells.n_p * tau2
    quad = (SS - tau2 * R * R / d) / sigma2
    per_player = cells.n_p * LOG_2PI + (cells.n_p - 1) * math.log(sigma2) + np.log(d) + quad
    return float(-0.5 * per_player.sum())


def fit_lmm(panel: CareerPanel, max_iter: int = 500, tol: float = 1e-8,
            center: float = AGE_CENTER, scale: float = AGE_SCALE) -> LmmFit:
    """EM fit of the cubic random-intercept model on the OBSERVED cells of a panel"""
    cells = _ObservedCells(panel, center, scale)
    if cells.n_groups < 2 or cells.y.size < 5:
        raise NumericError(
            f"fit_lmm needs >= 2 players and >= 5 observed cells, got {cells.n_groups} and {cells.y.size}"
        )

    # OLS start
    beta = gls_beta(cells, 0.0, 1.0)
    r = cells.y - cells.X @ beta
    sigma2 = max(float(np.mean(r * r)), 1e-12)
    between = float(np.var(cells.group_sum(r) / cells.n_p))
    tau2 = max(between - sigma2 / float(np.mean(cells.n_p)), 0.1 * sigma2)

    loglik = marginal_loglik(cells, beta, tau2, sigma2)
    trace = [loglik]
    converged = False
    boundary = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        beta = gls_beta(cells, tau2, sigma2)

        # E-step: posterior moments of the player intercepts
        r = cells.y - cells.X @ beta
        R = cells.group_sum(r)
        d = sigma2 + cells.n_p * tau2
        post_mean = tau2 * R / d
        post_var = tau2 * sigma2 / d

        # M-step
        tau2 = float(np.mean(post_mean ** 2 + post_var))
        resid = r - post_mean[cells.group]
        sigma2 = float((np.sum(resid * resid) + np.sum(cells.n_p * post_var)) / cells.y.size)
        if tau2 < TAU2_FLOOR:
            tau2 = 0.0
            boundary = True
        if sigma2 <= 0:
            raise NumericError("residual variance collapsed to zero")

        new_loglik = marginal_loglik(cells, beta, tau2, sigma2)
        if not math.isfinite(new_loglik):
            raise NumericError(f"log-likelihood became non-finite at EM iteration {n_iter}")
        if new_loglik < loglik - 1e-9 * max(abs(loglik), 1.0):
            logger.warning(f"⚠️ EM log-likelihood decreased at iteration {n_iter}: {loglik:.10g} -> {new_loglik:.10g}")
        trace.append(new_loglik)
        change = abs(new_loglik - loglik) / max(abs(loglik), 1e-12)
        loglik = new_loglik
        if change < tol:
            converged = True
            break

    fit = LmmFit(
        beta=tuple(beta),
        tau2=tau2,
        sigma2=sigma2,
        loglik=loglik,
        n_players=int(cells.n_groups),
        n_obs=int(cells.y.size),
        converged=converged,
        boundary=boundary,
        n_iter=n_iter,
        center=center,
        scale=scale,
        min_age=panel.grid.min_age,
        max_age=panel.grid.max_age,
        loglik_trace=tuple(trace),
    )
    if not converged:
        logger.warning(f"⚠️ LMM fit did not converge after {max_iter} iterations")
    if boundary:
        logger.warning("⚠️ LMM fit hit the tau2 = 0 boundary")
    logger.log(
        f"✅ LMM fit: tau2={fit.tau2:.6g}, sigma2={fit.sigma2:.6g}, loglik={fit.loglik:.6f} "
        f"({fit.n_players} players, {fit.n_obs} cells, {n_iter} iterations)"
    )
    return fit


# -------------------------
# Key-value persistence
# -------------------------
_FLOAT_KEYS = ("tau2", "sigma2", "loglik", "center", "scale")
_INT_KEYS = ("n_players", "n_obs", "n_iter", "min_age", "max_age")
_BOOL_KEYS = ("converged", "boundary")


def fit_to_text(fit: LmmFit) -> str:
    lines = [f"beta{k}={fit.beta[k]!r}" for k in range(4)]
    lines += [f"{key}={getattr(fit, key)!r}" for key in _FLOAT_KEYS]
    lines += [f"{key}={str(getattr(fit, key)).lower()}" for key in _BOOL_KEYS]
    lines += [f"{key}={getattr(fit, key)}" for key in _INT_KEYS]
    return "\n".join(lines) + "\n"


def save_fit(fit: LmmFit, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fit_to_text(fit))


def load_fit(path) -> LmmFit:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise IngestError(f"cannot read LMM fit file {path}: {e}")
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        beta = tuple(float(values[f"beta{k}"]) for k in range(4))
        kwargs = {key: float(values[key]) for key in _FLOAT_KEYS if key in values}
        kwargs.update({key: int(values[key]) for key in _INT_KEYS if key in values})
        kwargs.update({key: values[key].lower() == "true" for key in _BOOL_KEYS if key in values})
        return LmmFit(beta=beta, tau2=float(values["tau2"]), sigma2=float(values["sigma2"]),
                      **{k: v for k, v in kwargs.items() if k not in ("tau2", "sigma2")})
    except (KeyError, ValueError) as e:
        raise NumericError(f"malformed LMM fit file {path}: {e}")


def with_grid(fit: LmmFit, grid: AgeGrid) -> LmmFit:
    return replace(fit, min_age=grid.min_age, max_age=grid.max_age)

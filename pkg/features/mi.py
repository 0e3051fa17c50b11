"""
Multiple Imputation Module

Multilevel multiple imputation of MISSING panel cells with a Gibbs sampler
for the two-level normal model with heterogeneous within-player variance:

    y_pq = x_q' beta + b_p + e_pq,   b_p ~ N(0, tau2),   e_pq ~ N(0, sigma2_p)

x_q is the centered cubic age basis of the mixed model. Parameters are
updated from OBSERVED cells only; each iteration ends by drawing every
MISSING cell from its predictive distribution. Each of the m chains keeps
the draws of its last iteration as one completed panel.

Randomness: each chain owns a chain-level stream (beta, tau2 and pooled
variance draws) and one stream per player keyed by the player id, so the
imputations do not depend on player order or on thread scheduling.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .core import CareerPanel
from .errors import ConfigError, NumericError
from .lmm import AGE_CENTER, AGE_SCALE, age_basis, fit_lmm
from .logger import logger
from .sim import STREAM_IMPUTE, SeededRng

PRIOR_DF = 1.0
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class MiConfig:
    m: int = 5
    n_iter: int = 30
    seed: int = 2022

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"multiple imputation needs m >= 2, got {self.m}")
        if self.n_iter < 1:
            raise ConfigError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class ChainState:
    """Current draws of one Gibbs chain"""
    beta: np.ndarray
    b: np.ndarray
    sigma2: np.ndarray
    tau2: float
    filled: np.ndarray
    resid_var: float
    chain_rng: np.random.Generator = field(repr=False)
    player_rngs: List[np.random.Generator] = field(repr=False)


@dataclass
class ImputationRun:
    completed: List[CareerPanel]
    trace_mean: np.ndarray
    trace_sd: np.ndarray
    config: MiConfig
    source_mask: np.ndarray
    warnings: List[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.completed)

    def imputed_values(self, chain: int) -> np.ndarray:
        """Chain's imputed values in row-major cell order"""
        return self.completed[chain].values[~self.source_mask]

    def traces_frame(self) -> pd.DataFrame:
        m, n_iter = self.trace_mean.shape
        return pd.DataFrame({
            "chain": np.repeat(np.arange(1, m + 1), n_iter),
            "iteration": np.tile(np.arange(1, n_iter + 1), m),
            "imputed_mean": self.trace_mean.ravel(),
            "imputed_sd": self.trace_sd.ravel(),
        })


def player_stream_key(player_id: str) -> Tuple[int, ...]:
    """Seed words of a player's stream: byte length, then the UTF-8 bytes of the id"""
    raw = player_id.encode("utf-8")
    return (len(raw), *raw)


class _PanelLayout:
    """Index structures of the observed/missing cells, shared by all chains"""

    def __init__(self, panel: CareerPanel, center: float = AGE_CENTER, scale: float = AGE_SCALE):
        self.panel = panel
        self.basis = age_basis(panel.grid.ages, center, scale)
        obs_rows, obs_cols = np.nonzero(panel.observed)
        miss_rows, miss_cols = np.nonzero(~panel.observed)
        self.obs_rows, self.obs_cols = obs_rows, obs_cols
        self.miss_rows, self.miss_cols = miss_rows, miss_cols
        self.y = panel.values[obs_rows, obs_cols]
        self.X = self.basis[obs_cols]
        self.X_miss = self.basis[miss_cols]
        self.n_players = panel.n_players
        self.n_p = np.bincount(obs_rows, minlength=self.n_players).astype(float)
        self.n_miss_p = np.bincount(miss_rows, minlength=self.n_players)
        # missing cells of player p sit at miss_start[p]:miss_start[p+1] (row-major order)
        self.miss_start = np.concatenate([[0], np.cumsum(self.n_miss_p)])
        self.pooled = self.n_p < 2
        self.keys = [player_stream_key(pid) for pid in panel.players]

    def player_sum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.obs_rows, weights=values, minlength=self.n_players)


def _check_preconditions(panel: CareerPanel) -> None:
    if panel.n_missing == 0:
        raise NumericError("impute needs at least one MISSING cell")
    usable = int(np.sum(panel.observed.sum(axis=1) >= 2))
    if usable < 2:
        raise NumericError(f"impute needs >= 2 players with >= 2 observed cells, got {usable}")


def _ols_start(layout: _PanelLayout):
    if np.linalg.matrix_rank(layout.X) < layout.X.shape[1]:
        raise NumericError("age basis is rank deficient on the observed cells")
    beta, *_ = np.linalg.lstsq(layout.X, layout.y, rcond=None)
    resid = layout.y - layout.X @ beta
    dof = layout.y.size - layout.X.shape[1]
    resid_var = float(resid @ resid / (dof if dof > 0 else layout.y.size))
    return beta, resid, resid_var


def initialize_chain(panel: CareerPanel, rng: SeededRng, chain: int = 0,
                     layout: Optional[_PanelLayout] = None) -> ChainState:
    """OLS start on observed cells; MISSING cells filled from N(x'beta, pooled residual variance)"""
    _check_preconditions(panel)
    layout = layout or _PanelLayout(panel)
    beta, resid, resid_var = _ols_start(layout)

    has_obs = layout.n_p > 0
    mean_resid = layout.player_sum(resid)[has_obs] / layout.n_p[has_obs]
    tau2 = float(np.var(mean_resid))
    start_var = max(resid_var, VARIANCE_FLOOR)

    chain_rng = rng.generator(chain, 0)
    player_rngs = [rng.generator(chain, 1, *key) for key in layout.keys]

    filled = np.array(panel.values, dtype=float)
    miss_mean = layout.X_miss @ beta
    sd = np.sqrt(resid_var)
    draws = np.empty(layout.miss_rows.size)
    for p in range(layout.n_players):
        lo, hi = layout.miss_start[p], layout.miss_start[p + 1]
        if hi > lo:
            draws[lo:hi] = miss_mean[lo:hi] + sd * player_rngs[p].standard_normal(hi - lo)
    filled[layout.miss_rows, layout.miss_cols] = draws

    return ChainState(
        beta=beta,
        b=np.zeros(layout.n_players),
        sigma2=np.full(layout.n_players, start_var),
        tau2=max(tau2, VARIANCE_FLOOR),
        filled=filled,
        resid_var=resid_var,
        chain_rng=chain_rng,
        player_rngs=player_rngs,
    )


def _gibbs_step(layout: _PanelLayout, state: ChainState, prior_scale: float) -> np.ndarray:
    """One systematic scan (beta, b, sigma2_p, tau2, missing y); returns this iteration's imputed values"""
    nu_s2 = PRIOR_DF * prior_scale

    # (a) beta | b, sigma2: precision-weighted least squares over observed cells
    w = 1.0 / state.sigma2[layout.obs_rows]
    A = layout.X.T @ (w[:, None] * layout.X)
    rhs = layout.X.T @ (w * (layout.y - state.b[layout.obs_rows]))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"beta full conditional is not positive definite: {e}")
    beta_hat = solve_triangular(L.T, solve_triangular(L, rhs, lower=True), lower=False)
    state.beta = beta_hat + solve_triangular(L.T, state.chain_rng.standard_normal(4), lower=False)

    # per-player random variates, drawn in a fixed order from each player's own stream
    z_b = np.empty(layout.n_players)
    chi = np.ones(layout.n_players)
    z_y = np.empty(layout.miss_rows.size)
    for p, gen in enumerate(state.player_rngs):
        z_b[p] = gen.standard_normal()
        if not layout.pooled[p]:
            chi[p] = gen.chisquare(PRIOR_DF + layout.n_p[p])
        lo, hi = layout.miss_start[p], layout.miss_start[p + 1]
        if hi > lo:
            z_y[lo:hi] = gen.standard_normal(hi - lo)

    # (b) b_p | beta, sigma2_p, tau2
    r = layout.y - layout.X @ state.beta
    precision = layout.n_p / state.sigma2 + 1.0 / state.tau2
    mean_b = (layout.player_sum(r) / state.sigma2) / precision
    state.b = mean_b + z_b / np.sqrt(precision)

    # (c) sigma2_p | beta, b_p: scaled inverse chi-square
    e = r - state.b[layout.obs_rows]
    ss = layout.player_sum(e * e)
    sigma2 = (nu_s2 + ss) / chi
    if layout.pooled.any():
        pooled_draw = (nu_s2 + float(ss.sum())) / state.chain_rng.chisquare(PRIOR_DF + layout.y.size)
        sigma2[layout.pooled] = pooled_draw
    state.sigma2 = np.maximum(sigma2, VARIANCE_FLOOR)

    # (d) tau2 | b
    tau2 = (nu_s2 + float(state.b @ state.b)) / state.chain_rng.chisquare(PRIOR_DF + layout.n_players)
    state.tau2 = max(tau2, VARIANCE_FLOOR)

    # (e) missing y | beta, b_p, sigma2_p
    miss_mean = layout.X_miss @ state.beta + state.b[layout.miss_rows]
    draws = miss_mean + np.sqrt(state.sigma2[layout.miss_rows]) * z_y
    state.filled[layout.miss_rows, layout.miss_cols] = draws
    return draws


def _run_chain(panel: CareerPanel, layout: _PanelLayout, rng: SeededRng, chain_key: int,
               n_iter: int, prior_scale: float):
    state = initialize_chain(panel, rng, chain_key, layout)
    means = np.empty(n_iter)
    sds = np.empty(n_iter)
    for it in range(n_iter):
        draws = _gibbs_step(layout, state, prior_scale)
        means[it] = draws.mean()
        sds[it] = draws.std(ddof=1) if draws.size > 1 else 0.0
    completed = panel.replace(values=state.filled, observed=np.ones_like(panel.observed))
    return completed, means, sds


def impute(panel: CareerPanel, config: MiConfig = MiConfig(), threads: int = 1,
           chain_streams: Optional[Sequence[int]] = None, prior_scale: Optional[float] = None) -> ImputationRun:
    """Run m independent chains and return the completed panels plus trace statistics"""
    _check_preconditions(panel)
    chain_streams = list(range(config.m)) if chain_streams is None else list(chain_streams)
    if len(chain_streams) != config.m:
        raise ConfigError(f"chain_streams needs {config.m} entries, got {len(chain_streams)}")

    warnings: List[str] = []
    layout = _PanelLayout(panel)
    n_borrow = int(layout.pooled.sum())
    if n_borrow:
        message = f"⚠️ {n_borrow} players with < 2 observed cells draw sigma2 from the pooled conditional"
        logger.warning(message)
        warnings.append(message)

    if prior_scale is None:
        try:
            prior_scale = fit_lmm(panel).sigma2
        except NumericError as e:
            prior_scale = _ols_start(layout)[2]
            message = f"⚠️ Prior scale taken from OLS residual variance ({e})"
            logger.warning(message)
            warnings.append(message)
    prior_scale = max(float(prior_scale), VARIANCE_FLOOR)

    rng = SeededRng(config.seed, STREAM_IMPUTE)
    logger.log(
        f"🔄 Imputing {panel.n_missing} missing cells: m={config.m}, {config.n_iter} iterations, "
        f"prior scale {prior_scale:.6g}, {threads} thread(s)"
    )

    def job(c):
        return _run_chain(panel, layout, rng, chain_streams[c], config.n_iter, prior_scale)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(config.m)))
    else:
        results = [job(c) for c in range(config.m)]

    return ImputationRun(
        completed=[r[0] for r in results],
        trace_mean=np.vstack([r[1] for r in results]),
        trace_sd=np.vstack([r[2] for r in results]),
        config=config,
        source_mask=np.array(panel.observed),
        warnings=warnings,
    )

"""
Features Package

This package contains the modular components of the aging curve toolkit.
Each module handles one stage of the pipelines.

Modules:
- config: Environment settings and the run manifest
- core: Age grid, OPS transform and the career panel
- ingest: Lahman Batting/People parsing into a career panel
- lmm: Cubic random-intercept mixed model fitted by EM
- sim: Seeded career simulation and dropout mechanisms
- mi: Two-level normal multiple imputation (Gibbs sampler)
- pool: Rubin's combining rules
- curve: Loess aging curves and curve comparison
- diag: Density and trace diagnostics of an imputation run
- commands / cli: Subcommand handlers and argument parsing
"""

__version__ = "1.0.0"

from .errors import AgingCurveError, ConfigError, IngestError, NumericError

from .core import (
    AgeGrid, PlayerSeason, TransformSpec, CareerPanel, PanelSummary,
    transform_ops, inverse_transform_ops, panel_summary, write_panel, read_panel
)

from .ingest import load_lahman, player_seasons, build_panel, compute_ops, adjusted_age

from .lmm import LmmFit, fit_lmm, predict_mean, predict_curve, save_fit, load_fit

from .sim import SeededRng, Mechanism, DropoutSpec, simulate_careers, apply_dropout

from .mi import MiConfig, ImputationRun, initialize_chain, impute

from .pool import PooledEstimate, rubin_pool, pool_curve

from .curve import AgingCurve, LoessSpec, CurveUse, fit_loess, panel_to_curve, curve_mae, peak_age

from .diag import DensityEstimate, kde, trace_stats, ks_distance

from .commands import PipelineConfig, run_pipeline_sim, run_pipeline_mlb

__all__ = [
    # Errors
    'AgingCurveError', 'ConfigError', 'IngestError', 'NumericError',

    # Core
    'AgeGrid', 'PlayerSeason', 'TransformSpec', 'CareerPanel', 'PanelSummary',
    'transform_ops', 'inverse_transform_ops', 'panel_summary', 'write_panel', 'read_panel',

    # Ingest
    'load_lahman', 'player_seasons', 'build_panel', 'compute_ops', 'adjusted_age',

    # Mixed model
    'LmmFit', 'fit_lmm', 'predict_mean', 'predict_curve', 'save_fit', 'load_fit',

    # Simulation
    'SeededRng', 'Mechanism', 'DropoutSpec', 'simulate_careers', 'apply_dropout',

    # Imputation and pooling
    'MiConfig', 'ImputationRun', 'initialize_chain', 'impute',
    'PooledEstimate', 'rubin_pool', 'pool_curve',

    # Curves and diagnostics
    'AgingCurve', 'LoessSpec', 'CurveUse', 'fit_loess', 'panel_to_curve', 'curve_mae', 'peak_age',
    'DensityEstimate', 'kde', 'trace_stats', 'ks_distance',

    # Pipelines
    'PipelineConfig', 'run_pipeline_sim', 'run_pipeline_mlb',
]

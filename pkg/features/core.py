"""
Core Types Module

Domain types shared by every stage (age grid, player seasons, career panels,
transform spec) and the response-scale transforms between OPS and the
arcsine-square-root scale used for modelling.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, IngestError, NumericError

HALF_PI = math.pi / 2
INVERSE_TOLERANCE = 1e-9
FLOAT_FORMAT = "%.12g"


@dataclass(frozen=True)
class AgeGrid:
    """Inclusive integer age window shared by every player"""
    min_age: int = 21
    max_age: int = 39

    def __post_init__(self):
        if self.min_age >= self.max_age:
            raise ConfigError(f"age grid needs min_age < max_age, got {self.min_age}..{self.max_age}")

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.min_age, self.max_age + 1)

    def __len__(self):
        return self.max_age - self.min_age + 1

    def index(self, age: int) -> int:
        if not self.min_age <= age <= self.max_age:
            raise NumericError(f"age {age} outside grid {self.min_age}..{self.max_age}")
        return int(age - self.min_age)


@dataclass(frozen=True)
class PlayerSeason:
    """One observed player-season"""
    player_id: str
    season: int
    age: int
    pa: int
    ops: float

    def __post_init__(self):
        if self.pa < 0 or self.ops < 0:
            raise NumericError(f"negative PA/OPS for {self.player_id} in {self.season}")


@dataclass(frozen=True)
class TransformSpec:
    """Affine min-max scaling bounds applied to OPS before the arcsine transform"""
    scale_min: float = 0.0
    scale_max: float = 1.6

    def __post_init__(self):
        if not self.scale_min < self.scale_max:
            raise ConfigError(f"transform needs scale_min < scale_max, got {self.scale_min}, {self.scale_max}")

    def to_dict(self) -> dict:
        return {"scale_min": self.scale_min, "scale_max": self.scale_max}


# -------------------------
# Transforms
# -------------------------
def transform_ops(ops, spec: TransformSpec):
    """Map OPS to arcsin(sqrt(scaled OPS)); accepts scalars or arrays"""
    arr = np.asarray(ops, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericError("transform_ops received a non-finite OPS value")
    clamped = np.clip(arr, spec.scale_min, spec.scale_max)
    scaled = (clamped - spec.scale_min) / (spec.scale_max - spec.scale_min)
    out = np.arcsin(np.sqrt(scaled))
    return float(out) if out.ndim == 0 else out


def inverse_transform_ops(y, spec: TransformSpec):
    """Map transformed values back to OPS units"""
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericError("inverse_transform_ops received a non-finite value")
    if np.any(arr < -INVERSE_TOLERANCE) or np.any(arr > HALF_PI + INVERSE_TOLERANCE):
        raise NumericError("inverse_transform_ops input outside [0, pi/2]")
    clamped = np.clip(arr, 0.0, HALF_PI)
    out = spec.scale_min + (spec.scale_max - spec.scale_min) * np.sin(clamped) ** 2
    return float(out) if out.ndim == 0 else out


# -------------------------
# Career panel
# -------------------------
@dataclass(frozen=True, eq=False)
class CareerPanel:
    """
    Rectangular player x age grid of transformed responses.

    `observed[i, j]` is True when player i has a usable season at grid age j;
    MISSING cells hold NaN in `values`. Arrays are made read-only on construction.
    """
    players: Tuple[str, ...]
    grid: AgeGrid
    values: np.ndarray
    observed: np.ndarray
    transform: TransformSpec = field(default_factory=TransformSpec)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        observed = np.array(self.observed, dtype=bool)
        if values.shape != observed.shape:
            raise NumericError(f"values {values.shape} and mask {observed.shape} differ in shape")
        if values.shape != (len(self.players), len(self.grid)):
            raise NumericError(
                f"panel shape {values.shape} does not match {len(self.players)} players x {len(self.grid)} ages"
            )
        if not np.all(np.isfinite(values[observed])):
            raise NumericError("an OBSERVED cell holds a non-finite value")
        values[~observed] = np.nan
        values.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "players", tuple(self.players))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def n_missing(self) -> int:
        return int(self.observed.size - self.observed.sum())

    def replace(self, values=None, observed=None, players=None) -> "CareerPanel":
        return CareerPanel(
            players=self.players if players is None else players,
            grid=self.grid,
            values=self.values if values is None else values,
            observed=self.observed if observed is None else observed,
            transform=self.transform,
        )

    def take(self, order: Sequence[int]) -> "CareerPanel":
        """Panel with players reordered (or subset) by row index"""
        order = list(order)
        return self.replace(
            values=self.values[order],
            observed=self.observed[order],
            players=[self.players[i] for i in order],
        )


@dataclass(frozen=True)
class PanelSummary:
    n_players: int
    n_observed: int
    missing_fraction: Dict[int, float]


def panel_summary(panel: CareerPanel) -> PanelSummary:
    """Player count, observed cell count and per-age missing fraction"""
    if panel.n_players == 0:
        fractions = {int(a): 0.0 for a in panel.grid.ages}
    else:
        missing = 1.0 - panel.observed.mean(axis=0)
        fractions = {int(a): float(f) for a, f in zip(panel.grid.ages, missing)}
    return PanelSummary(n_players=panel.n_players, n_observed=panel.n_observed, missing_fraction=fractions)


# -------------------------
# Panel CSV I/O
# -------------------------
PANEL_COLUMNS = ["player_id", "age", "value", "observed"]


def panel_to_frame(panel: CareerPanel) -> pd.DataFrame:
    n_ages = len(panel.grid)
    return pd.DataFrame({
        "player_id": np.repeat(np.array(panel.players, dtype=object), n_ages),
        "age": np.tile(panel.grid.ages, panel.n_players),
        "value": panel.values.ravel(),
        "observed": panel.observed.ravel().astype(int),
    }, columns=PANEL_COLUMNS)


def write_panel(panel: CareerPanel, path) -> None:
    """Write the long-format panel CSV plus its transform sidecar"""
    frame = panel_to_frame(panel)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n", encoding="utf-8")
    with open(f"{path}.transform.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(panel.transform.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def read_panel(path, grid: Optional[AgeGrid] = None, transform: Optional[TransformSpec] = None) -> CareerPanel:
    """Read a long-format panel CSV; players keep first-appearance order"""
    try:
        frame = pd.read_csv(path, dtype={"player_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"cannot read panel file {path}: {e}")
    missing_cols = [c for c in PANEL_COLUMNS if c not in frame.columns]
    if missing_cols:
        raise NumericError(f"panel file {path} lacks columns {missing_cols}")

    if transform is None:
        sidecar = f"{path}.transform.json"
        if os.path.isfile(sidecar):
            with open(sidecar, encoding="utf-8") as fh:
                transform = TransformSpec(**json.load(fh))
        else:
            transform = TransformSpec()
    if grid is None:
        grid = AgeGrid(int(frame["age"].min()), int(frame["age"].max()))

    players: List[str] = list(dict.fromkeys(frame["player_id"]))
    row = {p: i for i, p in enumerate(players)}
    values = np.full((len(players), len(grid)), np.nan)
    observed = np.zeros((len(players), len(grid)), dtype=bool)
    in_grid = frame[(frame["age"] >= grid.min_age) & (frame["age"] <= grid.max_age)]
    rows = in_grid["player_id"].map(row).to_numpy()
    cols = (in_grid["age"] - grid.min_age).to_numpy(dtype=int)
    obs = in_grid["observed"].to_numpy(dtype=int) == 1
    values[rows[obs], cols[obs]] = in_grid["value"].to_numpy(dtype=float)[obs]
    observed[rows[obs], cols[obs]] = True
    return CareerPanel(players=players, grid=grid, values=values, observed=observed, transform=transform)

"""
Lahman Ingest Module

Parses Lahman-format Batting and People tables, computes OPS and the
June-30 adjusted age for each player-season, applies the plate-appearance
and debut filters and builds a CareerPanel in transformed units.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .core import AgeGrid, CareerPanel, PlayerSeason, TransformSpec, transform_ops
from .errors import IngestError, NumericError
from .logger import logger

BATTING_COLUMNS = ["playerID", "yearID", "AB", "H", "2B", "3B", "HR", "BB", "HBP", "SF", "SH"]
PEOPLE_COLUMNS = ["playerID", "birthYear", "birthMonth", "debut"]

# Columns absent from early-era rows count as zero
ZERO_IF_BLANK = {"HBP", "SF", "SH"}


@dataclass(frozen=True)
class BattingRow:
    """Counting stats for one player-season (or one stint of it)"""
    player_id: str
    season: int
    ab: int = 0
    h: int = 0
    doubles: int = 0
    triples: int = 0
    hr: int = 0
    bb: int = 0
    hbp: int = 0
    sf: int = 0
    sh: int = 0

    def __post_init__(self):
        counts = (self.ab, self.h, self.doubles, self.triples, self.hr, self.bb, self.hbp, self.sf, self.sh)
        if any(c < 0 for c in counts):
            raise NumericError(f"negative counting stat for {self.player_id} in {self.season}")
        if self.h < self.doubles + self.triples + self.hr:
            raise NumericError(f"hits below extra-base hits for {self.player_id} in {self.season}")

    @property
    def pa(self) -> int:
        return self.ab + self.bb + self.hbp + self.sf + self.sh

    def __add__(self, other: "BattingRow") -> "BattingRow":
        if (other.player_id, other.season) != (self.player_id, self.season):
            raise NumericError("only stints of the same player-season can be combined")
        return BattingRow(
            player_id=self.player_id,
            season=self.season,
            ab=self.ab + other.ab,
            h=self.h + other.h,
            doubles=self.doubles + other.doubles,
            triples=self.triples + other.triples,
            hr=self.hr + other.hr,
            bb=self.bb + other.bb,
            hbp=self.hbp + other.hbp,
            sf=self.sf + other.sf,
            sh=self.sh + other.sh,
        )


@dataclass(frozen=True)
class PersonRow:
    player_id: str
    birth_year: Optional[int]
    birth_month: Optional[int]
    debut_year: Optional[int]

    def __post_init__(self):
        if self.birth_month is not None and not 1 <= self.birth_month <= 12:
            raise NumericError(f"birth month {self.birth_month} out of range for {self.player_id}")


# -------------------------
# Per-row computations
# -------------------------
def compute_ops(row: BattingRow) -> float:
    """On-base plus slugging for one (aggregated) player-season"""
    obp_denominator = row.ab + row.bb + row.hbp + row.sf
    if row.ab <= 0 or obp_denominator <= 0:
        raise NumericError(f"zero OPS denominator for {row.player_id} in {row.season}")
    obp = (row.h + row.bb + row.hbp) / obp_denominator
    singles = row.h - row.doubles - row.triples - row.hr
    total_bases = singles + 2 * row.doubles + 3 * row.triples + 4 * row.hr
    slg = total_bases / row.ab
    return obp + slg


def adjusted_age(person: PersonRow, season: int) -> int:
    """Age on June 30 of the season"""
    if person.birth_year is None or person.birth_month is None:
        raise NumericError(f"missing birth data for {person.player_id}")
    if season < person.birth_year:
        raise NumericError(f"season {season} precedes birth year of {person.player_id}")
    age = season - person.birth_year
    if person.birth_month > 6:
        age -= 1
    return age


# -------------------------
# CSV parsing
# -------------------------
def _to_int(value, column, blank_zero=False) -> Optional[int]:
    if value is None or (isinstance(value, float) and math.isnan(value)) or str(value).strip() == "":
        if blank_zero:
            return 0
        return None
    text = str(value).strip()
    number = float(text)
    if not number.is_integer():
        raise ValueError(f"{column}={text} is not an integer")
    return int(number)


def _read_table(path, label, warnings):
    """Read a CSV as strings; rows with the wrong field count are logged and skipped"""
    def skip_bad_line(fields):
        _warn(warnings, f"⚠️ Skipping malformed {label} line in {path}: {','.join(fields)}")
        return None

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, engine="python", on_bad_lines=skip_bad_line)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"cannot read {label} file {path}: {e}")
    # short rows come back with NaN in the trailing fields
    return frame.fillna("")


def read_batting(path, warnings: Optional[list] = None) -> List[BattingRow]:
    """Parse a Lahman Batting CSV; malformed rows are logged and skipped"""
    frame = _read_table(path, "batting", warnings)
    absent = [c for c in BATTING_COLUMNS if c not in frame.columns]
    if absent:
        raise IngestError(f"batting file {path} lacks columns {absent}")

    rows = []
    for line_no, record in enumerate(frame[BATTING_COLUMNS].to_dict("records"), start=2):
        try:
            player_id = record["playerID"].strip()
            season = _to_int(record["yearID"], "yearID")
            if not player_id or season is None:
                raise ValueError("missing playerID or yearID")
            counts = {col: _to_int(record[col], col, blank_zero=col in ZERO_IF_BLANK) for col in BATTING_COLUMNS[2:]}
            if any(v is None for v in counts.values()):
                raise ValueError("blank counting stat")
            rows.append(BattingRow(
                player_id=player_id,
                season=season,
                ab=counts["AB"],
                h=counts["H"],
                doubles=counts["2B"],
                triples=counts["3B"],
                hr=counts["HR"],
                bb=counts["BB"],
                hbp=counts["HBP"],
                sf=counts["SF"],
                sh=counts["SH"],
            ))
        except (ValueError, NumericError) as e:
            _warn(warnings, f"⚠️ Skipping batting line {line_no} of {path}: {e}")
    return rows


def read_people(path, warnings: Optional[list] = None) -> List[PersonRow]:
    """Parse a Lahman People CSV; malformed rows are logged and skipped"""
    frame = _read_table(path, "people", warnings)
    absent = [c for c in PEOPLE_COLUMNS if c not in frame.columns]
    if absent:
        raise IngestError(f"people file {path} lacks columns {absent}")

    people = []
    for line_no, record in enumerate(frame[PEOPLE_COLUMNS].to_dict("records"), start=2):
        try:
            player_id = record["playerID"].strip()
            if not player_id:
                raise ValueError("missing playerID")
            debut = record["debut"].strip()
            debut_year = int(debut[:4]) if debut else None
            people.append(PersonRow(
                player_id=player_id,
                birth_year=_to_int(record["birthYear"], "birthYear"),
                birth_month=_to_int(record["birthMonth"], "birthMonth"),
                debut_year=debut_year,
            ))
        except (ValueError, NumericError) as e:
            _warn(warnings, f"⚠️ Skipping people line {line_no} of {path}: {e}")
    return people


def load_lahman(batting_path, people_path, warnings: Optional[list] = None) -> Tuple[List[BattingRow], List[PersonRow]]:
    """Parse both tables concurrently"""
    with ThreadPoolExecutor(max_workers=2) as pool:
        batting_job = pool.submit(read_batting, batting_path, warnings)
        people_job = pool.submit(read_people, people_path, warnings)
        return batting_job.result(), people_job.result()


# -------------------------
# Panel construction
# -------------------------
def aggregate_stints(batting: List[BattingRow]) -> Dict[Tuple[str, int], BattingRow]:
    """Sum stints of the same player-season"""
    seasons: Dict[Tuple[str, int], BattingRow] = {}
    for row in batting:
        key = (row.player_id, row.season)
        seasons[key] = seasons[key] + row if key in seasons else row
    return seasons


def index_people(people: List[PersonRow], warnings: Optional[list] = None) -> Dict[str, PersonRow]:
    """People by id; ids listed twice with different birth or debut data are excluded"""
    by_id: Dict[str, PersonRow] = {}
    conflicting = set()
    for person in people:
        known = by_id.get(person.player_id)
        if known is not None and known != person:
            conflicting.add(person.player_id)
        by_id.setdefault(person.player_id, person)
    for player_id in sorted(conflicting):
        _warn(warnings, f"⚠️ Excluding {player_id}: conflicting People records")
        del by_id[player_id]
    return by_id


def player_seasons(
    batting: List[BattingRow],
    people: List[PersonRow],
    min_pa: int = 0,
    warnings: Optional[list] = None,
) -> List[PlayerSeason]:
    """Join aggregated seasons to birth data; keeps seasons with PA >= min_pa and a defined OPS"""
    by_id = index_people(people, warnings)

    out = []
    reported = set()
    for (player_id, season), row in sorted(aggregate_stints(batting).items()):
        person = by_id.get(player_id)
        if person is None:
            if player_id not in reported:
                _warn(warnings, f"⚠️ Excluding {player_id}: no People record")
                reported.add(player_id)
            continue
        try:
            age = adjusted_age(person, season)
        except NumericError as e:
            if player_id not in reported:
                _warn(warnings, f"⚠️ Excluding {player_id}: {e}")
                reported.add(player_id)
            continue
        if row.pa < min_pa:
            continue
        try:
            ops = compute_ops(row)
        except NumericError as e:
            _warn(warnings, f"⚠️ Dropping {player_id} {season}: {e} (PA={row.pa})")
            continue
        out.append(PlayerSeason(player_id=player_id, season=season, age=age, pa=row.pa, ops=ops))
    return out


def build_panel(
    batting: List[BattingRow],
    people: List[PersonRow],
    grid: AgeGrid = AgeGrid(),
    min_pa: int = 100,
    min_debut: int = 1985,
    spec: TransformSpec = TransformSpec(),
    warnings: Optional[list] = None,
) -> CareerPanel:
    """Career panel of every eligible player; a cell is OBSERVED iff PA >= min_pa at that age"""
    by_id = index_people(people, warnings)
    eligible = {
        player_id for player_id, p in by_id.items()
        if p.debut_year is not None and p.debut_year >= min_debut
    }
    # players with a People record that fails the debut filter (or conflicts) leave silently
    known = {p.player_id for p in people}
    batting = [row for row in batting if row.player_id in eligible or row.player_id not in known]

    cells: Dict[str, Dict[int, float]] = {}
    for ps in player_seasons(batting, [by_id[player_id] for player_id in sorted(eligible)], min_pa, warnings):
        if not grid.min_age <= ps.age <= grid.max_age:
            continue
        cells.setdefault(ps.player_id, {})[ps.age] = ps.ops

    players = sorted(cells)
    if not players:
        raise IngestError("join of Batting and People produced zero players")

    values = np.full((len(players), len(grid)), np.nan)
    observed = np.zeros((len(players), len(grid)), dtype=bool)
    for i, player_id in enumerate(players):
        for age, ops in cells[player_id].items():
            j = grid.index(age)
            values[i, j] = transform_ops(ops, spec)
            observed[i, j] = True

    logger.log(f"✅ Built career panel: {len(players)} players, {int(observed.sum())} observed player-seasons")
    return CareerPanel(players=players, grid=grid, values=values, observed=observed, transform=spec)


def _warn(warnings: Optional[list], message: str) -> None:
    logger.warning(message)
    if warnings is not None:
        warnings.append(message)

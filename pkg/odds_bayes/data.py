"""
Match and odds ingestion.

Reads one football-data.co.uk style CSV per league season, indexes teams and
seasons, attaches per-bookmaker implicit scoring rates and caches the
augmented dataset in a versioned CSV file.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dateutil import parser as date_parser

from .config import DEFAULT_BOOKMAKERS
from .errors import (
    DegenerateOdds,
    EmptyTrain,
    InvalidSimplex,
    MalformedHeader,
    MissingData,
    NoConvergence,
    NonPositiveOdd,
    NoRoot,
    UnknownSeason,
    UnknownTeam,
    UnparseableRow,
)
from .metrics import MetricsManager
from .odds import DecimalOddsTriple, get_converter, invert_decimal_odds, odds_from_cells
from .skellam import RATE_CAP, RatePair, implicit_rates

log = logging.getLogger(__name__)

REQUIRED_COLUMNS: Tuple[str, ...] = ("Date", "HomeTeam", "AwayTeam", "FTHG", "FTAG")
AUGMENTED_MAGIC = "#odds-bayes-augmented"
AUGMENTED_VERSION = 1
OUTCOME_INDEX = {"win": 0, "draw": 1, "loss": 2}


class ProbMethod(str, Enum):
    BASIC = "basic"
    SHIN = "shin"


@dataclass(frozen=True)
class MatchRecord:
    """One played fixture. Teams are stored by name; the Dataset holds the index table."""
    season: int
    date: date
    home_team: str
    away_team: str
    goals_home: int
    goals_away: int
    odds: Dict[str, DecimalOddsTriple] = field(default_factory=dict)
    line: int = 0

    @property
    def outcome(self) -> str:
        if self.goals_home > self.goals_away:
            return "win"
        if self.goals_home == self.goals_away:
            return "draw"
        return "loss"


@dataclass(frozen=True)
class AugmentedMatch:
    record: MatchRecord
    implicit: Dict[str, RatePair]
    prob_method: ProbMethod


@dataclass
class AttachStats:
    """Tally of implicit-rate inversions."""
    attempted: int = 0
    succeeded: int = 0
    failures: Counter = field(default_factory=Counter)
    reasons: Counter = field(default_factory=Counter)

    @property
    def failed(self) -> int:
        return sum(self.failures.values())

    def merge(self, other: "AttachStats") -> None:
        self.attempted += other.attempted
        self.succeeded += other.succeeded
        self.failures.update(other.failures)
        self.reasons.update(other.reasons)


class TeamIndex:
    """Bijection between team names and dense 0-based indices (sorted by name)."""

    def __init__(self, names: Iterable[str]):
        self._names: Tuple[str, ...] = tuple(sorted(set(names)))
        self._index: Dict[str, int] = {name: i for i, name in enumerate(self._names)}

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TeamIndex) and self._names == other._names

    @property
    def names(self) -> Tuple[str, ...]:
        return self._names

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownTeam(f"Unknown team: {name}", team=name) from None

    def name(self, index: int) -> str:
        return self._names[index]


@dataclass(frozen=True)
class Dataset:
    """Ordered augmented matches with team, season and bookmaker tables."""
    matches: Tuple[AugmentedMatch, ...]
    teams: TeamIndex
    seasons: Tuple[int, ...]
    bookmakers: Dict[str, str]
    method: ProbMethod = ProbMethod.SHIN

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    @property
    def n_seasons(self) -> int:
        return max(self.seasons) if self.seasons else 0

    @property
    def n_bookmakers(self) -> int:
        return len(self.bookmakers)

    def __len__(self) -> int:
        return len(self.matches)

    def view(self, seasons: Iterable[int]) -> "Dataset":
        keep = tuple(sorted(set(seasons)))
        matches = tuple(m for m in self.matches if m.record.season in keep)
        return replace(self, matches=matches, seasons=keep)

    def home_index(self) -> np.ndarray:
        return np.array([self.teams.index(m.record.home_team) for m in self.matches], dtype=int)

    def away_index(self) -> np.ndarray:
        return np.array([self.teams.index(m.record.away_team) for m in self.matches], dtype=int)

    def season_index(self) -> np.ndarray:
        """0-based season of every match."""
        return np.array([m.record.season - 1 for m in self.matches], dtype=int)

    def goals(self) -> Tuple[np.ndarray, np.ndarray]:
        home = np.array([m.record.goals_home for m in self.matches], dtype=int)
        away = np.array([m.record.goals_away for m in self.matches], dtype=int)
        return home, away

    def outcomes(self) -> np.ndarray:
        return np.array([OUTCOME_INDEX[m.record.outcome] for m in self.matches], dtype=int)


def _parse_int(text: str, column: str, line: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise UnparseableRow(f"Column {column} is not a number on line {line}", line=line, column=column) from None
    if value < 0 or value != int(value):
        raise UnparseableRow(f"Column {column} must be a nonnegative integer on line {line}",
                             line=line, column=column)
    return int(value)


def _parse_date(text: str, line: int) -> date:
    try:
        return date_parser.parse(text, dayfirst=True).date()
    except (ValueError, OverflowError) as e:
        raise UnparseableRow(f"Unparseable date {text!r} on line {line}", line=line) from e


def read_frame(path: str | Path) -> pd.DataFrame:
    """Read a raw CSV with every cell as text; missing cells become empty strings."""
    path = Path(path)
    if not path.exists():
        raise MissingData(f"Data file not found: {path}", path=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                            encoding="utf-8-sig", encoding_errors="replace")
    except pd.errors.EmptyDataError as e:
        raise MalformedHeader(f"Empty file: {path}", path=str(path)) from e
    except pd.errors.ParserError as e:
        raise UnparseableRow(f"Unparseable CSV {path}: {e}", path=str(path)) from e
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def load_csv(path: str | Path, season: int = 1,
             bookmakers: Optional[Mapping[str, str]] = None) -> List[MatchRecord]:
    """
    Parse one season file. Columns are located by header name. Missing odds
    cells leave the bookmaker absent; rows with missing scores are dropped and
    counted.
    """
    bookmakers = dict(bookmakers or DEFAULT_BOOKMAKERS)
    frame = read_frame(path)
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedHeader(f"Missing columns {missing} in {path}", path=str(path), missing=missing)
    present = {
        name: prefix for name, prefix in bookmakers.items()
        if all(f"{prefix}{s}" in frame.columns for s in "HDA")
    }

    records: List[MatchRecord] = []
    dropped = 0
    invalid_odds = 0
    for offset, row in enumerate(frame.to_dict("records")):
        line = offset + 2
        cells = {c: str(row[c]).strip() for c in REQUIRED_COLUMNS}
        if not any(cells.values()):
            continue
        if not cells["FTHG"] or not cells["FTAG"]:
            dropped += 1
            continue
        if not cells["HomeTeam"] or not cells["AwayTeam"]:
            raise UnparseableRow(f"Missing team name on line {line}", line=line)
        if cells["HomeTeam"] == cells["AwayTeam"]:
            raise UnparseableRow(f"Team plays itself on line {line}", line=line, team=cells["HomeTeam"])

        odds: Dict[str, DecimalOddsTriple] = {}
        for name, prefix in present.items():
            try:
                triple = odds_from_cells(tuple(row[f"{prefix}{s}"] for s in "HDA"))
            except NonPositiveOdd:
                invalid_odds += 1
                continue
            except ValueError as e:
                raise UnparseableRow(f"Unparseable {name} odds on line {line}",
                                     line=line, bookmaker=name) from e
            if triple is not None:
                odds[name] = triple

        records.append(MatchRecord(
            season=season,
            date=_parse_date(cells["Date"], line),
            home_team=cells["HomeTeam"],
            away_team=cells["AwayTeam"],
            goals_home=_parse_int(cells["FTHG"], "FTHG", line),
            goals_away=_parse_int(cells["FTAG"], "FTAG", line),
            odds=odds,
            line=line,
        ))

    if dropped:
        log.warning("data.rows_dropped path=%s count=%d reason=missing_score", path, dropped)
    if invalid_odds:
        log.warning("data.odds_dropped path=%s count=%d reason=odd_not_above_one", path, invalid_odds)
    log.info("data.loaded path=%s season=%d matches=%d bookmakers=%d", path, season, len(records), len(present))
    return records


def write_csv(records: Sequence[MatchRecord], path: str | Path,
              bookmakers: Optional[Mapping[str, str]] = None) -> None:
    """Write records in the football-data.co.uk column convention."""
    bookmakers = dict(bookmakers or DEFAULT_BOOKMAKERS)
    rows = []
    for r in records:
        row = {
            "Date": r.date.strftime("%d/%m/%Y"),
            "HomeTeam": r.home_team,
            "AwayTeam": r.away_team,
            "FTHG": r.goals_home,
            "FTAG": r.goals_away,
        }
        for name, prefix in bookmakers.items():
            triple = r.odds.get(name)
            for suffix, value in zip("HDA", triple.as_tuple() if triple else (None, None, None)):
                row[f"{prefix}{suffix}"] = "" if value is None else f"{value:.2f}"
        rows.append(row)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=list(REQUIRED_COLUMNS) + [
        f"{p}{s}" for p in bookmakers.values() for s in "HDA"
    ]).to_csv(path, index=False)
    log.debug("data.written path=%s matches=%d", path, len(rows))


def season_files(data_dir: str | Path, league: str, pattern: str = "{league}_*.csv",
                 explicit: Optional[Sequence[str]] = None) -> List[Path]:
    """Season files in chronological order; season k is the k-th file."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise MissingData(f"Data directory not found: {data_dir}", path=str(data_dir))
    if explicit:
        files = [data_dir / name for name in explicit]
        absent = [str(f) for f in files if not f.exists()]
        if absent:
            raise MissingData(f"Season files not found: {absent}", files=absent)
        return files
    files = sorted(data_dir.glob(pattern.format(league=league)))
    if not files:
        raise MissingData(f"No season files for league {league} in {data_dir}", league=league)
    return files


def _invert_record(record: MatchRecord, method: str, cap: float) -> Tuple[Dict[str, RatePair], AttachStats]:
    converter = get_converter(method)
    stats = AttachStats()
    implicit: Dict[str, RatePair] = {}
    for name, triple in record.odds.items():
        stats.attempted += 1
        try:
            probs = converter.convert(invert_decimal_odds(triple))
            implicit[name] = implicit_rates(probs, cap=cap)
            stats.succeeded += 1
        except (NoConvergence, NoRoot, DegenerateOdds, InvalidSimplex) as e:
            stats.failures[name] += 1
            stats.reasons[e.error_type.value] += 1
    return implicit, stats


def _invert_chunk(args: Tuple[List[MatchRecord], str, float]) -> List[Tuple[Dict[str, RatePair], AttachStats]]:
    records, method, cap = args
    return [_invert_record(r, method, cap) for r in records]


def attach_implicit_rates(records: Sequence[MatchRecord], method: ProbMethod | str,
                          cap: float = RATE_CAP, workers: int = 1,
                          stats: Optional[AttachStats] = None) -> List[AugmentedMatch]:
    """
    Convert each bookmaker's odds with the chosen method and invert them into
    implicit rates. Failed inversions leave the bookmaker absent and are
    tallied in stats.
    """
    method = ProbMethod(method)
    stats = stats if stats is not None else AttachStats()
    if workers > 1 and len(records) > 1:
        size = -(-len(records) // workers)
        chunks = [(list(records[i:i + size]), method.value, cap) for i in range(0, len(records), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [item for chunk in pool.map(_invert_chunk, chunks) for item in chunk]
    else:
        results = [_invert_record(r, method.value, cap) for r in records]

    metrics = MetricsManager.get()
    augmented: List[AugmentedMatch] = []
    for record, (implicit, record_stats) in zip(records, results):
        stats.merge(record_stats)
        for name, count in record_stats.failures.items():
            for _ in range(count):
                metrics.record_inversion_failure(name)
        augmented.append(AugmentedMatch(record=record, implicit=implicit, prob_method=method))

    if stats.failed:
        log.warning("data.inversion_failures method=%s failed=%d attempted=%d by_bookmaker=%s",
                    method.value, stats.failed, stats.attempted, dict(stats.failures))
    log.info("data.rates_attached method=%s matches=%d inversions=%d", method.value, len(augmented), stats.succeeded)
    return augmented


def build_dataset(records: Sequence[MatchRecord], method: ProbMethod | str,
                  bookmakers: Optional[Mapping[str, str]] = None, cap: float = RATE_CAP,
                  workers: int = 1, stats: Optional[AttachStats] = None) -> Dataset:
    bookmakers = dict(bookmakers or DEFAULT_BOOKMAKERS)
    ordered = sorted(records, key=lambda r: (r.season, r.date, r.line))
    matches = attach_implicit_rates(ordered, method, cap=cap, workers=workers, stats=stats)
    teams = TeamIndex(name for r in ordered for name in (r.home_team, r.away_team))
    seasons = tuple(sorted({r.season for r in ordered}))
    return Dataset(matches=tuple(matches), teams=teams, seasons=seasons,
                   bookmakers=bookmakers, method=ProbMethod(method))


def load_league(data_dir: str | Path, league: str, method: ProbMethod | str,
                bookmakers: Optional[Mapping[str, str]] = None, pattern: str = "{league}_*.csv",
                explicit: Optional[Sequence[str]] = None, cap: float = RATE_CAP,
                workers: int = 1, stats: Optional[AttachStats] = None) -> Dataset:
    """Load every season file of a league and attach implicit rates."""
    records: List[MatchRecord] = []
    for season, path in enumerate(season_files(data_dir, league, pattern, explicit), start=1):
        records.extend(load_csv(path, season, bookmakers))
    return build_dataset(records, method, bookmakers, cap, workers, stats)


def split_by_season(dataset: Dataset, test_season: int) -> Tuple[Dataset, Dataset]:
    """Train on every season before test_season; test on test_season alone."""
    if test_season not in dataset.seasons:
        raise UnknownSeason(f"Season {test_season} is not in the dataset",
                            season=test_season, available=list(dataset.seasons))
    train_seasons = [s for s in dataset.seasons if s < test_season]
    if not train_seasons:
        raise EmptyTrain(f"No seasons precede season {test_season}", season=test_season)
    return dataset.view(train_seasons), dataset.view([test_season])


def _augmented_columns(bookmakers: Mapping[str, str]) -> List[str]:
    columns = ["season", "date", "line", "HomeTeam", "AwayTeam", "FTHG", "FTAG"]
    for prefix in bookmakers.values():
        columns += [f"{prefix}H", f"{prefix}D", f"{prefix}A", f"{prefix}_theta_home", f"{prefix}_theta_away"]
    return columns


def save_augmented(dataset: Dataset, path: str | Path) -> None:
    """Cache the augmented dataset; the first line carries the format version and tables."""
    header = {
        "version": AUGMENTED_VERSION,
        "method": dataset.method.value,
        "seasons": list(dataset.seasons),
        "bookmakers": dataset.bookmakers,
        "teams": list(dataset.teams.names),
    }
    rows = []
    for m in dataset.matches:
        r = m.record
        row = {
            "season": r.season, "date": r.date.isoformat(), "line": r.line,
            "HomeTeam": r.home_team, "AwayTeam": r.away_team,
            "FTHG": r.goals_home, "FTAG": r.goals_away,
        }
        for name, prefix in dataset.bookmakers.items():
            triple = r.odds.get(name)
            rates = m.implicit.get(name)
            row[f"{prefix}H"], row[f"{prefix}D"], row[f"{prefix}A"] = triple.as_tuple() if triple else (None,) * 3
            row[f"{prefix}_theta_home"], row[f"{prefix}_theta_away"] = rates.as_tuple() if rates else (None,) * 2
        rows.append(row)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{AUGMENTED_MAGIC} {json.dumps(header, sort_keys=True)}\n")
        pd.DataFrame(rows, columns=_augmented_columns(dataset.bookmakers)).to_csv(
            f, index=False, float_format="%.17g")
    log.info("data.augmented_saved path=%s matches=%d", path, len(rows))


def load_augmented(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise MissingData(f"Augmented dataset not found: {path}", path=str(path))
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        magic, _, payload = first.partition(" ")
        if magic != AUGMENTED_MAGIC:
            raise MalformedHeader(f"Not an augmented dataset: {path}", path=str(path))
        header = json.loads(payload)
        if header.get("version") != AUGMENTED_VERSION:
            raise MalformedHeader(f"Unsupported augmented version {header.get('version')}", path=str(path))
        frame = pd.read_csv(f, dtype=str, keep_default_na=False)

    bookmakers: Dict[str, str] = header["bookmakers"]
    method = ProbMethod(header["method"])
    matches = []
    for row in frame.to_dict("records"):
        odds: Dict[str, DecimalOddsTriple] = {}
        implicit: Dict[str, RatePair] = {}
        for name, prefix in bookmakers.items():
            triple = odds_from_cells(tuple(row[f"{prefix}{s}"] for s in "HDA"))
            if triple is not None:
                odds[name] = triple
            if row[f"{prefix}_theta_home"]:
                implicit[name] = RatePair(theta_home=float(row[f"{prefix}_theta_home"]),
                                          theta_away=float(row[f"{prefix}_theta_away"]))
        record = MatchRecord(
            season=int(row["season"]),
            date=date.fromisoformat(row["date"]),
            home_team=row["HomeTeam"],
            away_team=row["AwayTeam"],
            goals_home=int(row["FTHG"]),
            goals_away=int(row["FTAG"]),
            odds=odds,
            line=int(row["line"]),
        )
        matches.append(AugmentedMatch(record=record, implicit=implicit, prob_method=method))
    log.info("data.augmented_loaded path=%s matches=%d", path, len(matches))
    return Dataset(matches=tuple(matches), teams=TeamIndex(header["teams"]),
                   seasons=tuple(header["seasons"]), bookmakers=bookmakers, method=method)

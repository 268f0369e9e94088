"""
Synthetic leagues generated from the model with known parameters.

Used as the recovery oracle in tests and by the `synth` command to write a
bundled data set in the same CSV convention as real league files.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import truncnorm

from .config import DEFAULT_BOOKMAKERS
from .data import Dataset, MatchRecord, build_dataset, write_csv
from .model import ModelParameters
from .odds import DecimalOddsTriple
from .skellam import three_way_probs_array

log = logging.getLogger(__name__)


@dataclass
class SyntheticLeague:
    """Generated matches with the parameters that produced them (per-match arrays in record order)."""
    records: List[MatchRecord]
    truth: ModelParameters
    teams: Tuple[str, ...]
    bookmakers: Dict[str, str]
    bookmaker_rates: np.ndarray

    @property
    def n_matches(self) -> int:
        return len(self.records)

    def dataset(self, method: str = "shin", workers: int = 1) -> Dataset:
        return build_dataset(self.records, method, self.bookmakers, workers=workers)

    def season_records(self, season: int) -> List[MatchRecord]:
        return [r for r in self.records if r.season == season]

    def write(self, directory: Union[str, Path], league: str = "SYN") -> List[Path]:
        """One CSV per season, named so that file order is season order."""
        directory = Path(directory)
        paths = []
        for season in sorted({r.season for r in self.records}):
            path = directory / f"{league}_{season:02d}.csv"
            write_csv(self.season_records(season), path, self.bookmakers)
            paths.append(path)
        log.info("synthetic.written directory=%s seasons=%d matches=%d", directory, len(paths), self.n_matches)
        return paths


def _random_walk(rng: np.random.Generator, n_teams: int, n_seasons: int, drift: float, sigma: float,
                 offset: Optional[np.ndarray]) -> np.ndarray:
    effects = np.zeros((n_teams, n_seasons))
    previous = np.zeros(n_teams) if offset is None else np.asarray(offset, dtype=float)
    for s in range(n_seasons):
        column = previous + drift + sigma * rng.standard_normal(n_teams)
        column -= column.mean()
        effects[:, s] = column
        previous = column
    return effects


def _schedule(rng: np.random.Generator, n_teams: int, rounds: int) -> List[Tuple[int, int]]:
    pairs = [(h, a) for h in range(n_teams) for a in range(n_teams) if h != a]
    fixtures: List[Tuple[int, int]] = []
    for _ in range(rounds):
        order = rng.permutation(len(pairs))
        fixtures.extend(pairs[i] for i in order)
    return fixtures


def _truncated_normal(rng: np.random.Generator, loc: np.ndarray, sd: float) -> np.ndarray:
    loc = np.asarray(loc, dtype=float)
    return truncnorm.rvs(-loc / sd, np.inf, loc=loc, scale=sd, random_state=rng)


def generate_league(n_teams: int = 6, n_seasons: int = 3, rounds: int = 1, seed: int = 0,
                    mu: float = 0.25, mu_away: float = 0.0, drift: Tuple[float, float] = (0.0, 0.0),
                    sigma: Tuple[float, float] = (0.25, 0.25), weight_prior: Tuple[float, float] = (2.0, 2.0),
                    alpha: Tuple[float, float] = (1.5, 1.1), lambda_sd: float = 0.4,
                    tau: Tuple[float, float] = (0.15, 0.15), n_bookmakers: int = 3, margin: float = 0.06,
                    attack_offset: Optional[Sequence[float]] = None,
                    first_year: int = 2000) -> SyntheticLeague:
    """
    Simulate a league from the model: random-walk effects with zero-sum
    seasons, Beta weights, truncated-Normal bookmaker-layer rates, bookmaker
    implicit rates around them, odds with a proportional margin rounded to
    two decimals, and Poisson scores at the mixture rates. Each season is
    `rounds` double round robins.
    """
    rng = np.random.default_rng(seed)
    names = tuple(f"Team{t + 1:02d}" for t in range(n_teams))
    bookmakers = dict(list(DEFAULT_BOOKMAKERS.items())[:n_bookmakers])
    offset = None if attack_offset is None else np.asarray(attack_offset, dtype=float)
    att = _random_walk(rng, n_teams, n_seasons, drift[0], sigma[0], offset)
    defence = _random_walk(rng, n_teams, n_seasons, drift[1], sigma[1], None)

    home_idx: List[int] = []
    away_idx: List[int] = []
    season_idx: List[int] = []
    dates: List[date] = []
    lines: List[int] = []
    per_round = max(1, n_teams // 2)
    for s in range(n_seasons):
        start = date(first_year + s, 8, 1)
        for k, (h, a) in enumerate(_schedule(rng, n_teams, rounds)):
            home_idx.append(h)
            away_idx.append(a)
            season_idx.append(s)
            dates.append(start + timedelta(days=7 * (k // per_round)))
            lines.append(k + 2)
    home = np.array(home_idx, dtype=int)
    away = np.array(away_idx, dtype=int)
    season = np.array(season_idx, dtype=int)
    n = home.shape[0]

    theta_home = np.exp(mu + att[home, season] + defence[away, season])
    theta_away = np.exp(mu_away + att[away, season] + defence[home, season])
    p_home = rng.beta(*weight_prior, size=n)
    p_away = rng.beta(*weight_prior, size=n)
    lam_home = _truncated_normal(rng, np.full(n, alpha[0]), lambda_sd)
    lam_away = _truncated_normal(rng, np.full(n, alpha[1]), lambda_sd)
    y_home = rng.poisson(p_home * theta_home + (1.0 - p_home) * lam_home)
    y_away = rng.poisson(p_away * theta_away + (1.0 - p_away) * lam_away)

    bm_rates = np.empty((n, n_bookmakers, 2))
    bm_rates[:, :, 0] = _truncated_normal(rng, np.repeat(lam_home[:, None], n_bookmakers, axis=1), tau[0])
    bm_rates[:, :, 1] = _truncated_normal(rng, np.repeat(lam_away[:, None], n_bookmakers, axis=1), tau[1])
    probs = three_way_probs_array(bm_rates[:, :, 0].ravel(), bm_rates[:, :, 1].ravel()).reshape(n, n_bookmakers, 3)
    decimal = np.maximum(np.round(1.0 / (probs * (1.0 + margin)), 2), 1.01)

    records: List[MatchRecord] = []
    bm_names = list(bookmakers)
    for m in range(n):
        odds: Dict[str, DecimalOddsTriple] = {
            bm_names[b]: DecimalOddsTriple(win=float(decimal[m, b, 0]), draw=float(decimal[m, b, 1]),
                                           loss=float(decimal[m, b, 2]))
            for b in range(n_bookmakers)
        }
        records.append(MatchRecord(
            season=int(season[m]) + 1,
            date=dates[m],
            home_team=names[home[m]],
            away_team=names[away[m]],
            goals_home=int(y_home[m]),
            goals_away=int(y_away[m]),
            odds=odds,
            line=lines[m],
        ))

    truth = ModelParameters(
        mu=mu, mu_att=drift[0], mu_def=drift[1], sigma_att=sigma[0], sigma_def=sigma[1],
        att=att, defence=defence, p_home=p_home, p_away=p_away,
        lambda_home=lam_home, lambda_away=lam_away,
        alpha1=alpha[0], alpha2=alpha[1], tau1=tau[0], tau2=tau[1], mu_away=mu_away,
    )
    log.info("synthetic.generated teams=%d seasons=%d matches=%d seed=%d", n_teams, n_seasons, n, seed)
    return SyntheticLeague(records=records, truth=truth, teams=names, bookmakers=bookmakers,
                           bookmaker_rates=bm_rates)

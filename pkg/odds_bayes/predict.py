"""
Posterior predictive replication, Bayesian p-values, match forecasts and
season simulation.

Forecasts propagate the full posterior: three-way probabilities and exact
score grids are averaged over thinned draws rather than computed at the
posterior mean. Test-season team effects are projected one step ahead
through the random-walk prior ("evolve") or held at the last fitted
season ("carry").
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import truncnorm

from .config import PPC_STATISTICS, PredictConfig, PriorConfig
from .data import AugmentedMatch, Dataset, TeamIndex
from .errors import IncompleteFixtures, UnknownTeam
from .mcmc import PosteriorDraws
from .odds import ProbTriple
from .skellam import RatePair, poisson_pmf_matrix, three_way_probs_array

log = logging.getLogger(__name__)

POINTS_QUANTILES: Tuple[float, ...] = (0.025, 0.25, 0.5, 0.75, 0.975)
_SIMULATION_CHUNK = 2000


@dataclass(frozen=True)
class Fixture:
    """A match to forecast. train_index is its position in the training data, if any."""
    match_id: int
    season: int
    home_team: str
    away_team: str
    implicit: Mapping[str, RatePair] = field(default_factory=dict)
    train_index: Optional[int] = None
    goals: Optional[Tuple[int, int]] = None
    date: Optional[date] = None

    @classmethod
    def from_match(cls, match: AugmentedMatch, match_id: int, train_index: Optional[int] = None) -> "Fixture":
        r = match.record
        return cls(match_id=match_id, season=r.season, home_team=r.home_team, away_team=r.away_team,
                   implicit=dict(match.implicit), train_index=train_index,
                   goals=(r.goals_home, r.goals_away), date=r.date)


def fixtures_from_dataset(dataset: Dataset, training: bool = False) -> List[Fixture]:
    """One fixture per match; training fixtures keep their index into the training data."""
    return [Fixture.from_match(m, i, i if training else None) for i, m in enumerate(dataset.matches)]


@dataclass
class MatchForecast:
    match_id: int
    home_team: str
    away_team: str
    probs: ProbTriple
    grid: np.ndarray
    mean_rates: RatePair
    tail_mass: float
    n_draws: int

    def grid_margins(self) -> Tuple[float, float, float]:
        """Home win, draw and away win mass of the score grid."""
        return (float(np.tril(self.grid, -1).sum()), float(np.trace(self.grid)),
                float(np.triu(self.grid, 1).sum()))

    def most_likely_score(self) -> Tuple[int, int]:
        i, j = np.unravel_index(int(np.argmax(self.grid)), self.grid.shape)
        return int(i), int(j)


def forecast_from_rates(gamma_home: np.ndarray, gamma_away: np.ndarray, match_id: int = 0,
                        home_team: str = "", away_team: str = "", max_goals: int = 10) -> MatchForecast:
    """Average Skellam probabilities and score grids over rate draws of one match."""
    gamma_home = np.asarray(gamma_home, dtype=float).ravel()
    gamma_away = np.asarray(gamma_away, dtype=float).ravel()
    n = gamma_home.shape[0]
    three = three_way_probs_array(gamma_home, gamma_away).mean(axis=0)
    three = three / three.sum()
    size = max_goals + 1
    grid = poisson_pmf_matrix(gamma_home, size).T @ poisson_pmf_matrix(gamma_away, size) / n
    covered = float(grid.sum())
    grid = grid / covered
    return MatchForecast(
        match_id=match_id,
        home_team=home_team,
        away_team=away_team,
        probs=ProbTriple.from_values(three),
        grid=grid,
        mean_rates=RatePair(theta_home=float(gamma_home.mean()), theta_away=float(gamma_away.mean())),
        tail_mass=max(0.0, 1.0 - covered),
        n_draws=n,
    )


class Forecaster:
    """
    Posterior predictive scoring rates for fixtures.

    Training fixtures use the stored mixture-rate draws. Other fixtures use
    theta from the (projected) team effects; when bookmaker rates are known
    and use_odds is set, the weight is drawn from its Beta prior and lambda
    from the truncated-Normal update of its prior by the bookmaker rates.
    """

    def __init__(self, posterior: PosteriorDraws, teams: TeamIndex, priors: Optional[PriorConfig] = None,
                 config: Optional[PredictConfig] = None, seed: int = 0, use_odds: bool = True):
        if len(teams) != posterior.n_teams:
            raise UnknownTeam(f"Posterior has {posterior.n_teams} teams, index has {len(teams)}",
                              posterior_teams=posterior.n_teams, index_teams=len(teams))
        self.posterior = posterior
        self.teams = teams
        self.priors = priors or PriorConfig()
        self.config = config or PredictConfig()
        self.seed = seed
        self.use_odds = use_odds
        self.draw_index = posterior.thinned_indices(self.config.max_draws)
        flat = posterior.flat()[self.draw_index]
        column = {name: flat[:, i] for i, name in enumerate(posterior.names) if "[" not in name}
        self.mu = column["mu"]
        self.mu_away = column.get("mu_away", np.zeros_like(self.mu))
        self.mu_att, self.mu_def = column["mu_att"], column["mu_def"]
        self.sigma_att, self.sigma_def = column["sigma_att"], column["sigma_def"]
        self.alpha = (column["alpha1"], column["alpha2"])
        self.tau = (column["tau1"], column["tau2"])
        self.att = posterior.effects("att")[self.draw_index]
        self.defence = posterior.effects("def")[self.draw_index]
        self._projected: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def n_draws(self) -> int:
        return int(self.draw_index.shape[0])

    def effects_for(self, season: int) -> Tuple[np.ndarray, np.ndarray]:
        """(n_draws, n_teams) attack and defence effects for a 1-based season."""
        fitted = self.posterior.n_seasons
        if season <= fitted:
            return self.att[:, :, season - 1], self.defence[:, :, season - 1]
        if season not in self._projected:
            att, dfn = self.att[:, :, -1].copy(), self.defence[:, :, -1].copy()
            if self.config.season_projection == "evolve":
                rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1, season)))
                for _ in range(season - fitted):
                    att = att + self.mu_att[:, None] + self.sigma_att[:, None] * rng.standard_normal(att.shape)
                    dfn = dfn + self.mu_def[:, None] + self.sigma_def[:, None] * rng.standard_normal(dfn.shape)
                    att -= att.mean(axis=1, keepdims=True)
                    dfn -= dfn.mean(axis=1, keepdims=True)
            self._projected[season] = (att, dfn)
            log.debug("predict.effects_projected season=%d mode=%s", season, self.config.season_projection)
        return self._projected[season]

    def score_rates(self, fixtures: Sequence[Fixture]) -> Tuple[np.ndarray, np.ndarray]:
        """theta draws, shape (n_draws, n_fixtures) each."""
        n = self.n_draws
        theta_home = np.empty((n, len(fixtures)))
        theta_away = np.empty_like(theta_home)
        for k, fx in enumerate(fixtures):
            h, a = self.teams.index(fx.home_team), self.teams.index(fx.away_team)
            att, dfn = self.effects_for(fx.season)
            theta_home[:, k] = np.exp(self.mu + att[:, h] + dfn[:, a])
            theta_away[:, k] = np.exp(self.mu_away + att[:, a] + dfn[:, h])
        return theta_home, theta_away

    def _bookmaker_rate(self, observed: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
        """
        Conjugate truncated-Normal draw of lambda given the bookmaker rates. The
        Phi(lambda/tau) normaliser of each bookmaker term is left out; it is
        within 3e-7 of one once lambda exceeds 5 tau.
        """
        lam_var = self.priors.lambda_variance
        tau2 = self.tau[side] ** 2
        precision = 1.0 / lam_var + observed.shape[0] / tau2
        mean = (self.alpha[side] / lam_var + observed.sum() / tau2) / precision
        sd = 1.0 / np.sqrt(precision)
        return truncnorm.rvs(-mean / sd, np.inf, loc=mean, scale=sd, random_state=rng)

    def rates(self, fixtures: Sequence[Fixture]) -> Tuple[np.ndarray, np.ndarray]:
        """Mixture-rate draws gamma for fixtures outside the training data."""
        gamma_home, gamma_away = self.score_rates(fixtures)
        if not self.use_odds:
            return gamma_home, gamma_away
        n = self.n_draws
        for k, fx in enumerate(fixtures):
            if not fx.implicit:
                continue
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(2, fx.match_id)))
            obs_home = np.array([r.theta_home for r in fx.implicit.values()])
            obs_away = np.array([r.theta_away for r in fx.implicit.values()])
            p_home = rng.beta(self.priors.beta_a, self.priors.beta_b, size=n)
            p_away = rng.beta(self.priors.beta_a, self.priors.beta_b, size=n)
            lam_home = self._bookmaker_rate(obs_home, 0, rng)
            lam_away = self._bookmaker_rate(obs_away, 1, rng)
            gamma_home[:, k] = p_home * gamma_home[:, k] + (1.0 - p_home) * lam_home
            gamma_away[:, k] = p_away * gamma_away[:, k] + (1.0 - p_away) * lam_away
        return gamma_home, gamma_away

    def fixture_rates(self, fixture: Fixture) -> Tuple[np.ndarray, np.ndarray]:
        if fixture.train_index is not None and self.posterior.gamma_home.size:
            # validates both teams
            self.teams.index(fixture.home_team)
            self.teams.index(fixture.away_team)
            gamma_home, gamma_away = self.posterior.rate_draws()
            keep = np.unique(np.linspace(0, gamma_home.shape[0] - 1,
                                         min(self.config.max_draws, gamma_home.shape[0])).round().astype(int))
            return gamma_home[keep, fixture.train_index], gamma_away[keep, fixture.train_index]
        gamma_home, gamma_away = self.rates([fixture])
        return gamma_home[:, 0], gamma_away[:, 0]

    def forecast_match(self, fixture: Fixture) -> MatchForecast:
        gamma_home, gamma_away = self.fixture_rates(fixture)
        return forecast_from_rates(gamma_home, gamma_away, fixture.match_id, fixture.home_team,
                                   fixture.away_team, self.config.max_goals)

    def forecast_all(self, fixtures: Sequence[Fixture]) -> List[MatchForecast]:
        forecasts = [self.forecast_match(fx) for fx in fixtures]
        log.info("predict.forecasts_done fixtures=%d draws=%d", len(forecasts), self.n_draws)
        return forecasts


def forecast_match(posterior: PosteriorDraws, fixture: Fixture, teams: TeamIndex,
                   priors: Optional[PriorConfig] = None, config: Optional[PredictConfig] = None,
                   seed: int = 0, use_odds: bool = True) -> MatchForecast:
    """Posterior predictive forecast of one fixture."""
    return Forecaster(posterior, teams, priors, config, seed, use_odds).forecast_match(fixture)


def forecasts_frame(forecasts: Sequence[MatchForecast], fixtures: Sequence[Fixture]) -> pd.DataFrame:
    rows = []
    for fc, fx in zip(forecasts, fixtures):
        rows.append({
            "match": fc.match_id,
            "season": fx.season,
            "date": fx.date.isoformat() if fx.date else "",
            "home_team": fc.home_team,
            "away_team": fc.away_team,
            "p_win": fc.probs.p_win,
            "p_draw": fc.probs.p_draw,
            "p_loss": fc.probs.p_loss,
            "rate_home": fc.mean_rates.theta_home,
            "rate_away": fc.mean_rates.theta_away,
            "tail_mass": fc.tail_mass,
            "goals_home": fx.goals[0] if fx.goals else None,
            "goals_away": fx.goals[1] if fx.goals else None,
        })
    return pd.DataFrame(rows)


def score_grids_frame(forecasts: Sequence[MatchForecast]) -> pd.DataFrame:
    """Long-format exact-score grids: one row per (match, home goals, away goals)."""
    frames = []
    for fc in forecasts:
        size = fc.grid.shape[0]
        i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        frames.append(pd.DataFrame({"match": fc.match_id, "home_goals": i.ravel(),
                                    "away_goals": j.ravel(), "probability": fc.grid.ravel()}))
    if not frames:
        return pd.DataFrame(columns=["match", "home_goals", "away_goals", "probability"])
    return pd.concat(frames, ignore_index=True)


# Posterior predictive checks

@dataclass
class ReplicatedScores:
    """Replicated training scores, shape (n_replications, n_matches) each."""
    home: np.ndarray
    away: np.ndarray

    @property
    def n_replications(self) -> int:
        return int(self.home.shape[0])


def _mean_goal_difference(home: np.ndarray, away: np.ndarray) -> np.ndarray:
    return np.mean(home - away, axis=-1)


def _draw_frequency(home: np.ndarray, away: np.ndarray) -> np.ndarray:
    return np.mean(home == away, axis=-1)


def _total_goals(home: np.ndarray, away: np.ndarray) -> np.ndarray:
    return np.sum(home + away, axis=-1)


def _max_home_score(home: np.ndarray, away: np.ndarray) -> np.ndarray:
    return np.max(home, axis=-1)


Statistic = Callable[[np.ndarray, np.ndarray], np.ndarray]

STATISTICS: Dict[str, Statistic] = {
    "mean_goal_difference": _mean_goal_difference,
    "draw_frequency": _draw_frequency,
    "total_goals": _total_goals,
    "max_home_score": _max_home_score,
}


def replicate_from_rates(gamma_home: np.ndarray, gamma_away: np.ndarray, seed: int = 0) -> ReplicatedScores:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    return ReplicatedScores(home=rng.poisson(gamma_home), away=rng.poisson(gamma_away))


def replicate_scores(posterior: PosteriorDraws, max_draws: int = 1000, seed: int = 0) -> ReplicatedScores:
    """One replicated data set per thinned posterior draw, from Poisson(gamma)."""
    gamma_home, gamma_away = posterior.rate_draws()
    if gamma_home.shape[0] > max_draws:
        keep = np.unique(np.linspace(0, gamma_home.shape[0] - 1, max_draws).round().astype(int))
        gamma_home, gamma_away = gamma_home[keep], gamma_away[keep]
    replicated = replicate_from_rates(gamma_home, gamma_away, seed)
    log.info("predict.replicated replications=%d matches=%d", replicated.n_replications, gamma_home.shape[1])
    return replicated


def _statistic(statistic: Union[str, Statistic]) -> Statistic:
    if callable(statistic):
        return statistic
    try:
        return STATISTICS[statistic]
    except KeyError:
        raise ValueError(f"Unknown statistic: {statistic}") from None


def bayesian_p_value(replicated: ReplicatedScores, statistic: Union[str, Statistic],
                     y_home: np.ndarray, y_away: np.ndarray) -> float:
    """Share of replications with T(y_rep) strictly greater than T(y)."""
    fn = _statistic(statistic)
    observed = fn(np.asarray(y_home), np.asarray(y_away))
    rep = np.broadcast_to(fn(replicated.home, replicated.away), (replicated.n_replications,))
    return float(np.mean(rep > observed))


def posterior_predictive_check(replicated: ReplicatedScores, y_home: np.ndarray, y_away: np.ndarray,
                               statistics: Sequence[str] = tuple(PPC_STATISTICS),
                               band: Tuple[float, float] = (0.05, 0.95)) -> pd.DataFrame:
    """p-value table; p-values outside band are flagged."""
    rows = []
    for name in statistics:
        fn = _statistic(name)
        p = bayesian_p_value(replicated, fn, y_home, y_away)
        rep = fn(replicated.home, replicated.away)
        rows.append({"statistic": name, "observed": float(fn(np.asarray(y_home), np.asarray(y_away))),
                     "replicated_mean": float(np.mean(rep)), "p_value": p,
                     "flagged": not band[0] < p < band[1]})
    table = pd.DataFrame(rows)
    flagged = table.loc[table["flagged"], "statistic"].tolist() if rows else []
    if flagged:
        log.warning("predict.ppc_flagged statistics=%s", flagged)
    return table


def goal_difference_table(replicated: ReplicatedScores, y_home: np.ndarray, y_away: np.ndarray,
                          level: float = 0.95) -> pd.DataFrame:
    """Observed goal-difference frequencies against the replicated envelope."""
    observed = np.asarray(y_home) - np.asarray(y_away)
    rep = replicated.home - replicated.away
    n_matches = observed.shape[0]
    if n_matches == 0:
        return pd.DataFrame(columns=["goal_difference", "observed", "replicated_mean", "lower", "upper"])
    low = int(min(observed.min(), rep.min()))
    high = int(max(observed.max(), rep.max()))
    diffs = np.arange(low, high + 1)
    obs_freq = np.array([np.mean(observed == d) for d in diffs])
    rep_freq = np.stack([np.mean(rep == d, axis=1) for d in diffs], axis=1)
    tail = (1.0 - level) / 2.0
    return pd.DataFrame({
        "goal_difference": diffs,
        "observed": obs_freq,
        "replicated_mean": rep_freq.mean(axis=0),
        "lower": np.quantile(rep_freq, tail, axis=0),
        "upper": np.quantile(rep_freq, 1.0 - tail, axis=0),
    })

# Season simulation

@dataclass
class SeasonSimulation:
    """Final points and ranks of simulated seasons."""
    teams: Tuple[str, ...]
    points: np.ndarray
    goal_difference: np.ndarray
    rank_counts: np.ndarray
    n_matches: int
    complete: bool

    @property
    def n_simulations(self) -> int:
        return int(self.points.shape[0])

    @property
    def rank_probabilities(self) -> np.ndarray:
        """(team, rank) probabilities; rank 0 is first place."""
        return self.rank_counts / self.n_simulations

    def merge(self, other: "SeasonSimulation") -> "SeasonSimulation":
        return SeasonSimulation(
            teams=self.teams,
            points=np.concatenate([self.points, other.points]),
            goal_difference=np.concatenate([self.goal_difference, other.goal_difference]),
            rank_counts=self.rank_counts + other.rank_counts,
            n_matches=self.n_matches,
            complete=self.complete,
        )

    def rank_table(self) -> pd.DataFrame:
        probs = self.rank_probabilities
        table = pd.DataFrame(probs, columns=[f"rank_{r + 1}" for r in range(len(self.teams))])
        table.insert(0, "expected_points", self.points.mean(axis=0))
        table.insert(0, "team", list(self.teams))
        return table.sort_values(["rank_1", "expected_points", "team"], ascending=[False, False, True],
                                 kind="mergesort").reset_index(drop=True)

    def points_quantiles(self, quantiles: Sequence[float] = POINTS_QUANTILES) -> pd.DataFrame:
        q = np.quantile(self.points, quantiles, axis=0)
        table = pd.DataFrame({"team": list(self.teams), "mean": self.points.mean(axis=0)})
        for level, values in zip(quantiles, q):
            table[f"q{level * 100:g}"] = values
        return table


def is_double_round_robin(fixtures: Sequence[Fixture]) -> bool:
    teams = {name for fx in fixtures for name in (fx.home_team, fx.away_team)}
    pairs = {(fx.home_team, fx.away_team) for fx in fixtures}
    expected = len(teams) * (len(teams) - 1)
    return len(fixtures) == expected and len(pairs) == expected


def _simulate_chunk(gamma_home: np.ndarray, gamma_away: np.ndarray, home: np.ndarray, away: np.ndarray,
                    rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    y_home = rng.poisson(gamma_home)
    y_away = rng.poisson(gamma_away)
    draw = (y_home == y_away).astype(int)
    points = (3 * (y_home > y_away) + draw) @ home + (3 * (y_away > y_home) + draw) @ away
    goal_diff = (y_home - y_away) @ home + (y_away - y_home) @ away
    n_sims, n_teams = points.shape
    order = np.lexsort((rng.random((n_sims, n_teams)), goal_diff, points), axis=-1)[:, ::-1]
    counts = np.zeros((n_teams, n_teams), dtype=np.int64)
    np.add.at(counts, (order, np.broadcast_to(np.arange(n_teams), order.shape)), 1)
    return points, goal_diff, counts


def simulate_season(forecaster: Forecaster, fixtures: Sequence[Fixture], n_simulations: int = 10000,
                    seed: int = 0) -> SeasonSimulation:
    """
    Simulate the fixture list n_simulations times, each under a posterior draw
    picked at random. Ties are broken by points, then goal difference, then
    at random.
    """
    complete = is_double_round_robin(fixtures)
    if not complete:
        log.warning("predict.incomplete_fixtures fixtures=%d", len(fixtures))
        warnings.warn(IncompleteFixtures(f"{len(fixtures)} fixtures do not form a double round robin"),
                      stacklevel=2)
    names = tuple(sorted({name for fx in fixtures for name in (fx.home_team, fx.away_team)}))
    local = {name: i for i, name in enumerate(names)}
    home = np.zeros((len(fixtures), len(names)), dtype=int)
    away = np.zeros_like(home)
    for k, fx in enumerate(fixtures):
        home[k, local[fx.home_team]] = 1
        away[k, local[fx.away_team]] = 1

    gamma_home, gamma_away = forecaster.rates(fixtures)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    result: Optional[SeasonSimulation] = None
    done = 0
    while done < n_simulations:
        size = min(_SIMULATION_CHUNK, n_simulations - done)
        picks = rng.integers(gamma_home.shape[0], size=size)
        points, goal_diff, counts = _simulate_chunk(gamma_home[picks], gamma_away[picks], home, away, rng)
        chunk = SeasonSimulation(teams=names, points=points, goal_difference=goal_diff, rank_counts=counts,
                                 n_matches=len(fixtures), complete=complete)
        result = chunk if result is None else result.merge(chunk)
        done += size
    if result is None:
        raise ValueError("n_simulations must be positive")
    log.info("predict.season_simulated simulations=%d teams=%d fixtures=%d",
             result.n_simulations, len(names), len(fixtures))
    return result

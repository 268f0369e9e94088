"""
Joint log-density of the bookmaker-informed dynamic Poisson model.

Scores are Poisson with rates p*theta + (1-p)*lambda, where theta comes from
home advantage and per-season attack/defence effects and lambda is the
bookmaker-layer rate, observed through per-bookmaker implicit rates with a
truncated-Normal likelihood. Attack and defence effects follow a Gaussian
random walk across seasons and sum to zero within each season.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import betaln, gammaln, log_ndtr, xlog1py, xlogy

from .config import PriorConfig
from .data import Dataset
from .skellam import RatePair

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# Elementwise log-densities. Out-of-support values give -inf.

def poisson_logpmf(y: np.ndarray, rate: np.ndarray) -> np.ndarray:
    return xlogy(y, rate) - rate - gammaln(np.asarray(y, dtype=float) + 1.0)


def normal_logpdf(x, loc, sd) -> np.ndarray:
    z = (np.asarray(x, dtype=float) - loc) / sd
    return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI


def truncnorm_logpdf(x, loc, sd) -> np.ndarray:
    """Normal(loc, sd) truncated to (0, inf), including the log Phi(loc/sd) normalizer."""
    x = np.asarray(x, dtype=float)
    out = normal_logpdf(x, loc, sd) - log_ndtr(np.asarray(loc, dtype=float) / sd)
    return np.where(x > 0.0, out, -np.inf)


def half_cauchy_logpdf(x, scale: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = math.log(2.0 / (math.pi * scale)) - np.log1p((x / scale) ** 2)
    return np.where(x > 0.0, out, -np.inf)


def beta_logpdf(p, a: float, b: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xlogy(a - 1.0, p) + xlog1py(b - 1.0, -p) - betaln(a, b)
    return np.where((p >= 0.0) & (p <= 1.0), out, -np.inf)


def zero_sum(free: np.ndarray) -> np.ndarray:
    """Append the implied last row so every column sums to zero."""
    return np.vstack([free, -free.sum(axis=0, keepdims=True)])


@dataclass
class ModelData:
    """Array view of a training set, in the layout the log-density needs."""
    n_teams: int
    n_seasons: int
    home: np.ndarray
    away: np.ndarray
    season: np.ndarray
    y_home: np.ndarray
    y_away: np.ndarray
    bm_match: np.ndarray
    bm_home: np.ndarray
    bm_away: np.ndarray
    bookmaker_names: Tuple[str, ...] = ()
    season_matches: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.season_matches:
            self.season_matches = [np.flatnonzero(self.season == s) for s in range(self.n_seasons)]

    @property
    def n_matches(self) -> int:
        return int(self.home.shape[0])

    @property
    def n_entries(self) -> int:
        return int(self.bm_match.shape[0])

    def bookmaker_counts(self) -> np.ndarray:
        return np.bincount(self.bm_match, minlength=self.n_matches)

    def bookmaker_means(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-match mean implicit rates and a mask of matches with any bookmaker entry."""
        counts = self.bookmaker_counts()
        has = counts > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            home = np.bincount(self.bm_match, weights=self.bm_home, minlength=self.n_matches) / counts
            away = np.bincount(self.bm_match, weights=self.bm_away, minlength=self.n_matches) / counts
        return home, away, has

    def match_sum(self, entry_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.bm_match, weights=entry_values, minlength=self.n_matches)

    @classmethod
    def from_dataset(cls, dataset: Dataset, n_seasons: Optional[int] = None) -> "ModelData":
        names = tuple(dataset.bookmakers)
        bm_match, bm_home, bm_away = [], [], []
        for m, match in enumerate(dataset.matches):
            for name in names:
                rates = match.implicit.get(name)
                if rates is not None:
                    bm_match.append(m)
                    bm_home.append(rates.theta_home)
                    bm_away.append(rates.theta_away)
        y_home, y_away = dataset.goals()
        return cls(
            n_teams=dataset.n_teams,
            n_seasons=n_seasons if n_seasons is not None else dataset.n_seasons,
            home=dataset.home_index(),
            away=dataset.away_index(),
            season=dataset.season_index(),
            y_home=y_home,
            y_away=y_away,
            bm_match=np.array(bm_match, dtype=int),
            bm_home=np.array(bm_home, dtype=float),
            bm_away=np.array(bm_away, dtype=float),
            bookmaker_names=names,
        )

    @classmethod
    def empty(cls, n_teams: int, n_seasons: int) -> "ModelData":
        none_i = np.zeros(0, dtype=int)
        none_f = np.zeros(0, dtype=float)
        return cls(n_teams, n_seasons, none_i, none_i, none_i, none_i, none_i, none_i, none_f, none_f)


@dataclass
class ModelParameters:
    """
    Full parameter state. att and defence are (n_teams, n_seasons) with each
    column summing to zero; the last team's effect is implied by the others.
    Per-match arrays have one entry per training match.
    """
    mu: float
    mu_att: float
    mu_def: float
    sigma_att: float
    sigma_def: float
    att: np.ndarray
    defence: np.ndarray
    p_home: np.ndarray
    p_away: np.ndarray
    lambda_home: np.ndarray
    lambda_away: np.ndarray
    alpha1: float
    alpha2: float
    tau1: float
    tau2: float
    mu_away: float = 0.0

    def copy(self) -> "ModelParameters":
        values = {}
        for f in fields(self):
            v = getattr(self, f.name)
            values[f.name] = v.copy() if isinstance(v, np.ndarray) else v
        return ModelParameters(**values)

    @property
    def n_teams(self) -> int:
        return int(self.att.shape[0])

    @property
    def n_seasons(self) -> int:
        return int(self.att.shape[1])

    def set_free_att(self, season: int, free: np.ndarray) -> None:
        self.att[:-1, season] = free
        self.att[-1, season] = -free.sum()

    def set_free_def(self, season: int, free: np.ndarray) -> None:
        self.defence[:-1, season] = free
        self.defence[-1, season] = -free.sum()

    def is_valid(self) -> bool:
        scalars_ok = all(math.isfinite(v) for v in (self.mu, self.mu_att, self.mu_def, self.mu_away))
        positive = min(self.sigma_att, self.sigma_def, self.alpha1, self.alpha2, self.tau1, self.tau2) > 0.0
        weights = all(np.all((p >= 0.0) & (p <= 1.0)) for p in (self.p_home, self.p_away))
        rates = all(np.all(lam > 0.0) for lam in (self.lambda_home, self.lambda_away))
        return scalars_ok and positive and weights and rates

    @classmethod
    def zeros(cls, n_teams: int, n_seasons: int, n_matches: int) -> "ModelParameters":
        """All effects zero, weights one half, unit rates and scales."""
        return cls(
            mu=0.0, mu_att=0.0, mu_def=0.0, sigma_att=1.0, sigma_def=1.0,
            att=np.zeros((n_teams, n_seasons)), defence=np.zeros((n_teams, n_seasons)),
            p_home=np.full(n_matches, 0.5), p_away=np.full(n_matches, 0.5),
            lambda_home=np.ones(n_matches), lambda_away=np.ones(n_matches),
            alpha1=1.0, alpha2=1.0, tau1=1.0, tau2=1.0,
        )

    @classmethod
    def initial(cls, data: ModelData) -> "ModelParameters":
        """
        Data-informed start: effects at zero, mu at the log home/away goal
        ratio, lambda at the per-match bookmaker mean (mean goals without
        odds), weights at one half.
        """
        params = cls.zeros(data.n_teams, data.n_seasons, data.n_matches)
        if data.n_matches:
            mean_home = float(np.mean(data.y_home))
            mean_away = float(np.mean(data.y_away))
            if mean_home > 0 and mean_away > 0:
                params.mu = math.log(mean_home / mean_away)
            bm_home, bm_away, has = data.bookmaker_means()
            params.lambda_home = np.where(has, bm_home, max(mean_home, 0.1))
            params.lambda_away = np.where(has, bm_away, max(mean_away, 0.1))
            params.alpha1 = float(np.mean(params.lambda_home))
            params.alpha2 = float(np.mean(params.lambda_away))
        if data.n_entries > 1:
            params.tau1 = max(float(np.std(data.bm_home - params.lambda_home[data.bm_match])), 0.05)
            params.tau2 = max(float(np.std(data.bm_away - params.lambda_away[data.bm_match])), 0.05)
        params.sigma_att = params.sigma_def = 0.5
        return params

    # Flat vector view with stable names

    @staticmethod
    def scalar_names(n_teams: int, n_seasons: int, n_matches: int = 0,
                     away_intercept: bool = False, per_match: bool = True) -> List[str]:
        names = ["mu"] + (["mu_away"] if away_intercept else []) + [
            "mu_att", "mu_def", "sigma_att", "sigma_def", "alpha1", "alpha2", "tau1", "tau2",
        ]
        names += [f"att[{t}][{s}]" for t in range(n_teams) for s in range(n_seasons)]
        names += [f"def[{t}][{s}]" for t in range(n_teams) for s in range(n_seasons)]
        if per_match:
            for key in ("p_home", "p_away", "lambda_home", "lambda_away"):
                names += [f"{key}[{m}]" for m in range(n_matches)]
        return names

    def to_vector(self, away_intercept: bool = False, per_match: bool = True) -> np.ndarray:
        parts = [np.array([self.mu])]
        if away_intercept:
            parts.append(np.array([self.mu_away]))
        parts.append(np.array([self.mu_att, self.mu_def, self.sigma_att, self.sigma_def,
                               self.alpha1, self.alpha2, self.tau1, self.tau2]))
        parts += [self.att.ravel(), self.defence.ravel()]
        if per_match:
            parts += [self.p_home, self.p_away, self.lambda_home, self.lambda_away]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_teams: int, n_seasons: int, n_matches: int,
                    away_intercept: bool = False) -> "ModelParameters":
        v = np.asarray(vector, dtype=float)
        i = 0

        def take(n: int) -> np.ndarray:
            nonlocal i
            out = v[i:i + n]
            i += n
            return out.copy()

        mu = float(take(1)[0])
        mu_away = float(take(1)[0]) if away_intercept else 0.0
        mu_att, mu_def, s_att, s_def, a1, a2, t1, t2 = (float(x) for x in take(8))
        size = n_teams * n_seasons
        att = take(size).reshape(n_teams, n_seasons)
        defence = take(size).reshape(n_teams, n_seasons)
        p_home, p_away, lam_home, lam_away = (take(n_matches) for _ in range(4))
        return cls(mu=mu, mu_att=mu_att, mu_def=mu_def, sigma_att=s_att, sigma_def=s_def,
                   att=att, defence=defence, p_home=p_home, p_away=p_away,
                   lambda_home=lam_home, lambda_away=lam_away,
                   alpha1=a1, alpha2=a2, tau1=t1, tau2=t2, mu_away=mu_away)


# Rates

def score_rates_array(params: ModelParameters, data: ModelData) -> Tuple[np.ndarray, np.ndarray]:
    s = data.season
    log_home = params.mu + params.att[data.home, s] + params.defence[data.away, s]
    log_away = params.mu_away + params.att[data.away, s] + params.defence[data.home, s]
    return np.exp(log_home), np.exp(log_away)


def score_rates(params: ModelParameters, data: ModelData, m: int) -> RatePair:
    """theta_home = exp(mu + att[home] + def[away]); theta_away = exp(att[away] + def[home])."""
    s, h, a = data.season[m], data.home[m], data.away[m]
    return RatePair(
        theta_home=math.exp(params.mu + params.att[h, s] + params.defence[a, s]),
        theta_away=math.exp(params.mu_away + params.att[a, s] + params.defence[h, s]),
    )


def mixture_rates_array(params: ModelParameters, data: ModelData) -> Tuple[np.ndarray, np.ndarray]:
    theta_home, theta_away = score_rates_array(params, data)
    gamma_home = params.p_home * theta_home + (1.0 - params.p_home) * params.lambda_home
    gamma_away = params.p_away * theta_away + (1.0 - params.p_away) * params.lambda_away
    return gamma_home, gamma_away


def mixture_rates(params: ModelParameters, data: ModelData, m: int) -> RatePair:
    """gamma = p*theta + (1-p)*lambda for each side of match m."""
    theta = score_rates(params, data, m)
    return RatePair(
        theta_home=params.p_home[m] * theta.theta_home + (1.0 - params.p_home[m]) * params.lambda_home[m],
        theta_away=params.p_away[m] * theta.theta_away + (1.0 - params.p_away[m]) * params.lambda_away[m],
    )


# Component terms (arrays) used by the sampler's block updates

def score_terms(params: ModelParameters, data: ModelData) -> Tuple[np.ndarray, np.ndarray]:
    gamma_home, gamma_away = mixture_rates_array(params, data)
    return poisson_logpmf(data.y_home, gamma_home), poisson_logpmf(data.y_away, gamma_away)


def bookmaker_terms(params: ModelParameters, data: ModelData) -> Tuple[np.ndarray, np.ndarray]:
    """Per-entry truncated-Normal log-densities of the implicit rates."""
    lam_home = params.lambda_home[data.bm_match]
    lam_away = params.lambda_away[data.bm_match]
    return (truncnorm_logpdf(data.bm_home, lam_home, params.tau1),
            truncnorm_logpdf(data.bm_away, lam_away, params.tau2))


def effect_prior_terms(effects: np.ndarray, drift: float, sigma: float) -> np.ndarray:
    """(n_teams, n_seasons) log-densities of the random walk with drift."""
    if effects.size == 0:
        return np.zeros_like(effects)
    means = np.empty_like(effects)
    means[:, 0] = drift
    means[:, 1:] = drift + effects[:, :-1]
    return normal_logpdf(effects, means, sigma)


def _fsum(*arrays: np.ndarray) -> float:
    return math.fsum(float(x) for a in arrays for x in np.ravel(a))


def log_likelihood_scores(params: ModelParameters, data: ModelData) -> float:
    """Sum over matches of the Poisson log-pmf of both scores at the mixture rates."""
    return _fsum(*score_terms(params, data))


def log_likelihood_bookmakers(params: ModelParameters, data: ModelData) -> float:
    return _fsum(*bookmaker_terms(params, data))


def hyper_prior_terms(params: ModelParameters, priors: PriorConfig,
                      away_intercept: bool = False) -> List[float]:
    sd = priors.normal_sd
    terms = [
        float(normal_logpdf(params.mu, 0.0, sd)),
        float(normal_logpdf(params.mu_att, 0.0, sd)),
        float(normal_logpdf(params.mu_def, 0.0, sd)),
        float(half_cauchy_logpdf(params.sigma_att, priors.half_cauchy_scale)),
        float(half_cauchy_logpdf(params.sigma_def, priors.half_cauchy_scale)),
        float(truncnorm_logpdf(params.alpha1, 0.0, math.sqrt(priors.alpha_variance))),
        float(truncnorm_logpdf(params.alpha2, 0.0, math.sqrt(priors.alpha_variance))),
        float(half_cauchy_logpdf(params.tau1, priors.tau_half_cauchy_scale)),
        float(half_cauchy_logpdf(params.tau2, priors.tau_half_cauchy_scale)),
    ]
    if away_intercept:
        terms.append(float(normal_logpdf(params.mu_away, 0.0, sd)))
    return terms


def match_prior_terms(params: ModelParameters, priors: PriorConfig) -> List[np.ndarray]:
    lam_sd = math.sqrt(priors.lambda_variance)
    return [
        beta_logpdf(params.p_home, priors.beta_a, priors.beta_b),
        beta_logpdf(params.p_away, priors.beta_a, priors.beta_b),
        truncnorm_logpdf(params.lambda_home, params.alpha1, lam_sd),
        truncnorm_logpdf(params.lambda_away, params.alpha2, lam_sd),
    ]


def log_prior(params: ModelParameters, priors: PriorConfig, away_intercept: bool = False) -> float:
    """
    Random-walk priors on the effects (evaluated for every team, including the
    implied one), hyperpriors, Beta weights and truncated-Normal bookmaker rates.
    """
    if min(params.sigma_att, params.sigma_def) <= 0.0:
        return -math.inf
    effects = [
        effect_prior_terms(params.att, params.mu_att, params.sigma_att),
        effect_prior_terms(params.defence, params.mu_def, params.sigma_def),
    ]
    return _fsum(np.array(hyper_prior_terms(params, priors, away_intercept)),
                 *effects, *match_prior_terms(params, priors))


def log_posterior(params: ModelParameters, data: ModelData, priors: PriorConfig,
                  away_intercept: bool = False) -> float:
    """Prior plus both likelihoods; -inf outside the support."""
    if not params.is_valid():
        return -math.inf
    total = _fsum(
        np.array([log_prior(params, priors, away_intercept)]),
        *score_terms(params, data),
        *bookmaker_terms(params, data),
    )
    return total if not math.isnan(total) else -math.inf


def gradient_mu_att(params: ModelParameters, data: ModelData, priors: PriorConfig,
                    team: int, season: int) -> Tuple[float, float]:
    """
    Analytic derivatives of log_posterior with respect to mu and the free
    attack effect att[team][season] (team < n_teams - 1; the last team's
    effect moves in the opposite direction).
    """
    theta_home, theta_away = score_rates_array(params, data)
    gamma_home, gamma_away = mixture_rates_array(params, data)
    w_home = (data.y_home / gamma_home - 1.0) * params.p_home * theta_home
    w_away = (data.y_away / gamma_away - 1.0) * params.p_away * theta_away

    d_mu = math.fsum(w_home) - params.mu / priors.normal_sd ** 2

    def d_att_full(t: int) -> float:
        in_season = data.season == season
        g = math.fsum(w_home[in_season & (data.home == t)]) + math.fsum(w_away[in_season & (data.away == t)])
        sigma2 = params.sigma_att ** 2
        mean = params.mu_att + (params.att[t, season - 1] if season > 0 else 0.0)
        g -= (params.att[t, season] - mean) / sigma2
        if season + 1 < params.n_seasons:
            g += (params.att[t, season + 1] - params.mu_att - params.att[t, season]) / sigma2
        return g

    last = params.n_teams - 1
    return d_mu, d_att_full(team) - d_att_full(last)

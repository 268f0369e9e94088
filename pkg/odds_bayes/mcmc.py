"""
Adaptive Metropolis-within-Gibbs sampler and convergence diagnostics.

Each sweep visits the configured blocks in order with random-walk proposals
on an unconstrained scale (log for scales and rates, logit for weights, free
zero-sum coordinates for team effects). Per-match weight and rate blocks are
vectorised: every match gets its own independent accept/reject step since its
parameters enter no other match's terms. Proposal scales follow a
Robbins-Monro schedule during burn-in and are frozen afterwards.
"""
from __future__ import annotations

import asyncio
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, NoReturn, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy.fft import irfft, next_fast_len, rfft
from scipy.special import expit, logit, ndtri
from scipy.stats import rankdata

from .config import PriorConfig, SamplerConfig
from .data import Dataset
from .errors import ChainFailure, MissingDraws, NonFiniteStart, OddsModelError
from .metrics import MetricsManager
from .model import (
    ModelData,
    ModelParameters,
    beta_logpdf,
    effect_prior_terms,
    half_cauchy_logpdf,
    log_posterior,
    mixture_rates_array,
    normal_logpdf,
    poisson_logpmf,
    truncnorm_logpdf,
)

log = logging.getLogger(__name__)

DRAWS_FILE = "draws.csv"
RATE_DRAWS_FILE = "rate_draws.npz"
MATCH_MEANS_FILE = "match_means.csv"
META_FILE = "fit_meta.yaml"

_INITIAL_SCALE: Dict[str, float] = {
    "mu": 0.05, "drift": 0.1, "att": 0.05, "def": 0.05, "scales": 0.2,
    "p_home": 0.5, "p_away": 0.5, "lambda_home": 0.1, "lambda_away": 0.1,
    "alpha": 0.05, "tau": 0.1,
}
_PER_MATCH_BLOCKS = ("p_home", "p_away", "lambda_home", "lambda_away")


class ConvergenceStatus(Enum):
    """Convergence levels of a fit."""
    CONVERGED = "converged"
    WARNING = "warning"
    FAILED = "failed"


class _Adapter:
    """Robbins-Monro log-scale adaptation for one block (scalar or per element)."""

    def __init__(self, size: int, initial: float, target: float, gain: float, window: int):
        self.log_scale = np.full(size, math.log(initial))
        self.target = target
        self.gain = gain
        self.window = window
        self._window_accepts = np.zeros(size)
        self._windows = 0
        self.accepts = np.zeros(size)
        self.proposals = 0

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def record(self, accepted, adapting: bool) -> None:
        accepted = np.asarray(accepted, dtype=float)
        if adapting:
            self._window_accepts += accepted
        else:
            self.accepts += accepted
            self.proposals += 1

    def end_window(self) -> None:
        self._windows += 1
        rate = self._window_accepts / self.window
        self.log_scale += self.gain / math.sqrt(self._windows) * (rate - self.target)
        self._window_accepts[:] = 0.0

    @property
    def acceptance_rate(self) -> float:
        if self.proposals == 0:
            return float("nan")
        return float(np.mean(self.accepts) / self.proposals)


@dataclass
class ChainResult:
    """Retained output of one chain."""
    chain_id: int
    draws: np.ndarray
    gamma_home: np.ndarray
    gamma_away: np.ndarray
    rate_iterations: np.ndarray
    match_sums: Dict[str, np.ndarray]
    match_draws: Dict[str, np.ndarray]
    acceptance: Dict[str, float]
    elapsed: float


class ChainSampler:
    """State and block updates of a single chain."""

    def __init__(self, data: ModelData, priors: PriorConfig, config: SamplerConfig, chain_id: int,
                 seed: int, away_intercept: bool = False, init: Optional[ModelParameters] = None):
        self.data = data
        self.priors = priors
        self.config = config
        self.chain_id = chain_id
        self.away_intercept = away_intercept
        self.rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_id,)))
        self.lam_sd = math.sqrt(priors.lambda_variance)
        self.alpha_sd = math.sqrt(priors.alpha_variance)
        self.params = init.copy() if init is not None else ModelParameters.initial(data)
        if config.init_jitter > 0:
            self._jitter(config.init_jitter)
        self.blocks = self._build_blocks(config.blocks)
        self.adapters: Dict[str, _Adapter] = {}
        for name, size, _ in self.blocks:
            base = name.split("[")[0]
            initial = _INITIAL_SCALE[base] / (math.sqrt(size) if base not in _PER_MATCH_BLOCKS else 1.0)
            n = data.n_matches if base in _PER_MATCH_BLOCKS else 1
            self.adapters[name] = _Adapter(n, initial, config.target_acceptance,
                                           config.adapt_gain, config.adapt_window)

    def _jitter(self, scale: float) -> None:
        p, rng = self.params, self.rng
        p.mu += scale * rng.standard_normal()
        if self.away_intercept:
            p.mu_away += scale * rng.standard_normal()
        if p.n_teams > 1:
            for s in range(p.n_seasons):
                p.set_free_att(s, p.att[:-1, s] + scale * rng.standard_normal(p.n_teams - 1))
                p.set_free_def(s, p.defence[:-1, s] + scale * rng.standard_normal(p.n_teams - 1))
        p.sigma_att *= math.exp(scale * rng.standard_normal())
        p.sigma_def *= math.exp(scale * rng.standard_normal())
        m = self.data.n_matches
        p.p_home = expit(logit(p.p_home) + scale * rng.standard_normal(m))
        p.p_away = expit(logit(p.p_away) + scale * rng.standard_normal(m))
        p.lambda_home = p.lambda_home * np.exp(scale * rng.standard_normal(m))
        p.lambda_away = p.lambda_away * np.exp(scale * rng.standard_normal(m))
        p.alpha1 *= math.exp(scale * rng.standard_normal())
        p.alpha2 *= math.exp(scale * rng.standard_normal())
        p.tau1 *= math.exp(scale * rng.standard_normal())
        p.tau2 *= math.exp(scale * rng.standard_normal())

    def _build_blocks(self, names: Sequence[str]) -> List[Tuple[str, int, Callable[[str], Any]]]:
        blocks: List[Tuple[str, int, Callable[[str], Any]]] = []
        teams, seasons, matches = self.data.n_teams, self.data.n_seasons, self.data.n_matches
        for name in names:
            if name in ("att", "def"):
                if teams < 2:
                    continue
                for s in range(seasons):
                    blocks.append((f"{name}[{s}]", teams - 1, self._effects_step))
            elif name in _PER_MATCH_BLOCKS:
                if matches:
                    blocks.append((name, matches, self._match_step))
            elif name == "mu":
                blocks.append((name, 2 if self.away_intercept else 1, self._vector_step))
            else:
                blocks.append((name, 2, self._vector_step))
        return blocks

    # Local log targets: only the terms a block changes, plus Jacobians

    def _score(self, idx: Optional[np.ndarray] = None) -> float:
        d, p = self.data, self.params
        if idx is None:
            idx = slice(None)
        h, a, s = d.home[idx], d.away[idx], d.season[idx]
        theta_home = np.exp(p.mu + p.att[h, s] + p.defence[a, s])
        theta_away = np.exp(p.mu_away + p.att[a, s] + p.defence[h, s])
        ph, pa = p.p_home[idx], p.p_away[idx]
        gamma_home = ph * theta_home + (1.0 - ph) * p.lambda_home[idx]
        gamma_away = pa * theta_away + (1.0 - pa) * p.lambda_away[idx]
        return float(np.sum(poisson_logpmf(d.y_home[idx], gamma_home))
                     + np.sum(poisson_logpmf(d.y_away[idx], gamma_away)))

    def _vector_target(self, name: str) -> float:
        p, pr = self.params, self.priors
        if name == "mu":
            lp = self._score() + float(normal_logpdf(p.mu, 0.0, pr.normal_sd))
            if self.away_intercept:
                lp += float(normal_logpdf(p.mu_away, 0.0, pr.normal_sd))
            return lp
        if name == "drift":
            return (float(np.sum(effect_prior_terms(p.att, p.mu_att, p.sigma_att)))
                    + float(np.sum(effect_prior_terms(p.defence, p.mu_def, p.sigma_def)))
                    + float(normal_logpdf(p.mu_att, 0.0, pr.normal_sd))
                    + float(normal_logpdf(p.mu_def, 0.0, pr.normal_sd)))
        if name == "scales":
            return (float(np.sum(effect_prior_terms(p.att, p.mu_att, p.sigma_att)))
                    + float(np.sum(effect_prior_terms(p.defence, p.mu_def, p.sigma_def)))
                    + float(half_cauchy_logpdf(p.sigma_att, pr.half_cauchy_scale))
                    + float(half_cauchy_logpdf(p.sigma_def, pr.half_cauchy_scale))
                    + math.log(p.sigma_att) + math.log(p.sigma_def))
        if name == "alpha":
            return (float(np.sum(truncnorm_logpdf(p.lambda_home, p.alpha1, self.lam_sd)))
                    + float(np.sum(truncnorm_logpdf(p.lambda_away, p.alpha2, self.lam_sd)))
                    + float(truncnorm_logpdf(p.alpha1, 0.0, self.alpha_sd))
                    + float(truncnorm_logpdf(p.alpha2, 0.0, self.alpha_sd))
                    + math.log(p.alpha1) + math.log(p.alpha2))
        if name == "tau":
            d = self.data
            return (float(np.sum(truncnorm_logpdf(d.bm_home, p.lambda_home[d.bm_match], p.tau1)))
                    + float(np.sum(truncnorm_logpdf(d.bm_away, p.lambda_away[d.bm_match], p.tau2)))
                    + float(half_cauchy_logpdf(p.tau1, pr.tau_half_cauchy_scale))
                    + float(half_cauchy_logpdf(p.tau2, pr.tau_half_cauchy_scale))
                    + math.log(p.tau1) + math.log(p.tau2))
        raise KeyError(name)

    def _get_vector(self, name: str) -> np.ndarray:
        p = self.params
        if name == "mu":
            return np.array([p.mu, p.mu_away] if self.away_intercept else [p.mu])
        if name == "drift":
            return np.array([p.mu_att, p.mu_def])
        if name == "scales":
            return np.log([p.sigma_att, p.sigma_def])
        if name == "alpha":
            return np.log([p.alpha1, p.alpha2])
        return np.log([p.tau1, p.tau2])

    def _set_vector(self, name: str, x: np.ndarray) -> None:
        p = self.params
        if name == "mu":
            p.mu = float(x[0])
            if self.away_intercept:
                p.mu_away = float(x[1])
        elif name == "drift":
            p.mu_att, p.mu_def = float(x[0]), float(x[1])
        elif name == "scales":
            p.sigma_att, p.sigma_def = (float(v) for v in np.exp(x))
        elif name == "alpha":
            p.alpha1, p.alpha2 = (float(v) for v in np.exp(x))
        else:
            p.tau1, p.tau2 = (float(v) for v in np.exp(x))

    def _accept(self, lp_new: float, lp_old: float) -> bool:
        log_u = math.log1p(-self.rng.random())
        return not math.isnan(lp_new) and log_u < lp_new - lp_old

    def _vector_step(self, name: str) -> bool:
        adapter = self.adapters[name]
        x_old = self._get_vector(name)
        lp_old = self._vector_target(name)
        x_new = x_old + adapter.scale[0] * self.rng.standard_normal(x_old.shape[0])
        self._set_vector(name, x_new)
        lp_new = self._vector_target(name)
        if self._accept(lp_new, lp_old):
            return True
        self._set_vector(name, x_old)
        return False

    def _effects_target(self, kind: str, season: int) -> float:
        p = self.params
        effects, drift, sigma = (p.att, p.mu_att, p.sigma_att) if kind == "att" else \
            (p.defence, p.mu_def, p.sigma_def)
        cols = effects[:, season:season + 2]
        means = np.empty_like(cols)
        means[:, 0] = drift + (effects[:, season - 1] if season > 0 else 0.0)
        if cols.shape[1] > 1:
            means[:, 1] = drift + effects[:, season]
        prior = float(np.sum(normal_logpdf(cols, means, sigma)))
        return prior + self._score(self.data.season_matches[season])

    def _effects_step(self, name: str) -> bool:
        kind, season = name[:3], int(name[4:-1])
        adapter = self.adapters[name]
        effects = self.params.att if kind == "att" else self.params.defence
        setter = self.params.set_free_att if kind == "att" else self.params.set_free_def
        x_old = effects[:-1, season].copy()
        lp_old = self._effects_target(kind, season)
        setter(season, x_old + adapter.scale[0] * self.rng.standard_normal(x_old.shape[0]))
        lp_new = self._effects_target(kind, season)
        if self._accept(lp_new, lp_old):
            return True
        setter(season, x_old)
        return False

    def _match_target(self, name: str) -> np.ndarray:
        d, p, pr = self.data, self.params, self.priors
        home = name.endswith("home")
        theta = np.exp(p.mu + p.att[d.home, d.season] + p.defence[d.away, d.season]) if home else \
            np.exp(p.mu_away + p.att[d.away, d.season] + p.defence[d.home, d.season])
        weight = p.p_home if home else p.p_away
        lam = p.lambda_home if home else p.lambda_away
        y = d.y_home if home else d.y_away
        lp = poisson_logpmf(y, weight * theta + (1.0 - weight) * lam)
        if name.startswith("p_"):
            with np.errstate(divide="ignore"):
                jacobian = np.log(weight) + np.log1p(-weight)
            return lp + beta_logpdf(weight, pr.beta_a, pr.beta_b) + jacobian
        observed = d.bm_home if home else d.bm_away
        tau = p.tau1 if home else p.tau2
        alpha = p.alpha1 if home else p.alpha2
        entries = truncnorm_logpdf(observed, lam[d.bm_match], tau)
        with np.errstate(divide="ignore"):
            jacobian = np.log(lam)
        return lp + d.match_sum(entries) + truncnorm_logpdf(lam, alpha, self.lam_sd) + jacobian

    def _match_step(self, name: str) -> np.ndarray:
        p = self.params
        attr = {"p_home": "p_home", "p_away": "p_away",
                "lambda_home": "lambda_home", "lambda_away": "lambda_away"}[name]
        to_free, from_free = (logit, expit) if name.startswith("p_") else (np.log, np.exp)
        old = getattr(p, attr).copy()
        lp_old = self._match_target(name)
        proposal = from_free(to_free(old) + self.adapters[name].scale * self.rng.standard_normal(old.shape[0]))
        setattr(p, attr, proposal)
        lp_new = self._match_target(name)
        log_u = np.log(self.rng.random(old.shape[0]))
        with np.errstate(invalid="ignore"):
            accepted = np.nan_to_num(lp_new - lp_old, nan=-np.inf) > log_u
        setattr(p, attr, np.where(accepted, proposal, old))
        return accepted

    def sweep(self, adapting: bool) -> None:
        for name, _, step in self.blocks:
            self.adapters[name].record(step(name), adapting)

    def acceptance(self) -> Dict[str, float]:
        """Post burn-in acceptance per block family (effects pooled over seasons)."""
        grouped: Dict[str, List[float]] = {}
        for name, adapter in self.adapters.items():
            grouped.setdefault(name.split("[")[0], []).append(adapter.acceptance_rate)
        return {k: float(np.nanmean(v)) if not all(math.isnan(x) for x in v) else float("nan")
                for k, v in grouped.items()}


def run_chain(data: Union[ModelData, Dataset], priors: PriorConfig, config: SamplerConfig, chain_id: int,
              seed: int = 0, away_intercept: bool = False, rate_thin: Optional[int] = None,
              init: Optional[ModelParameters] = None) -> ChainResult:
    """
    Run one chain; returns the retained global draws, thinned mixture-rate and
    per-match parameter draws, and running sums of the per-match parameters.
    Deterministic given the seed and chain id.
    """
    if isinstance(data, Dataset):
        data = ModelData.from_dataset(data)
    start = time.perf_counter()
    sampler = ChainSampler(data, priors, config, chain_id, seed, away_intercept, init)
    lp = log_posterior(sampler.params, data, priors, away_intercept)
    if not math.isfinite(lp):
        raise NonFiniteStart(f"Initial state of chain {chain_id} has log posterior {lp}", chain=chain_id)

    rate_thin = rate_thin or config.rate_thin
    n_retained = config.n_iterations - config.n_burnin
    names_count = len(ModelParameters.scalar_names(data.n_teams, data.n_seasons, away_intercept=away_intercept,
                                                   per_match=False))
    draws = np.empty((n_retained, names_count))
    rate_iterations = np.arange(0, n_retained, rate_thin)
    gamma_home = np.empty((rate_iterations.shape[0], data.n_matches))
    gamma_away = np.empty_like(gamma_home)
    sums = {key: np.zeros(data.n_matches) for key in _PER_MATCH_BLOCKS}
    match_draws = {key: np.empty_like(gamma_home) for key in _PER_MATCH_BLOCKS}

    for it in range(config.n_iterations):
        adapting = it < config.n_burnin
        sampler.sweep(adapting)
        if adapting and (it + 1) % config.adapt_window == 0:
            for adapter in sampler.adapters.values():
                adapter.end_window()
        if adapting:
            continue
        i = it - config.n_burnin
        p = sampler.params
        draws[i] = p.to_vector(away_intercept, per_match=False)
        for key in _PER_MATCH_BLOCKS:
            sums[key] += getattr(p, key)
        if i % rate_thin == 0:
            j = i // rate_thin
            d = data
            theta_home = np.exp(p.mu + p.att[d.home, d.season] + p.defence[d.away, d.season])
            theta_away = np.exp(p.mu_away + p.att[d.away, d.season] + p.defence[d.home, d.season])
            gamma_home[j] = p.p_home * theta_home + (1.0 - p.p_home) * p.lambda_home
            gamma_away[j] = p.p_away * theta_away + (1.0 - p.p_away) * p.lambda_away
            for key in _PER_MATCH_BLOCKS:
                match_draws[key][j] = getattr(p, key)

    acceptance = sampler.acceptance()
    elapsed = time.perf_counter() - start
    log.info("sampler.chain_done chain=%d iterations=%d elapsed=%.2f acceptance=%s",
             chain_id, config.n_iterations, elapsed,
             " ".join(f"{k}:{v:.2f}" for k, v in acceptance.items()))
    return ChainResult(chain_id=chain_id, draws=draws, gamma_home=gamma_home, gamma_away=gamma_away,
                       rate_iterations=rate_iterations, match_sums=sums, match_draws=match_draws,
                       acceptance=acceptance,
                       elapsed=elapsed)


# Diagnostics

def _split_chains(x: np.ndarray) -> Optional[np.ndarray]:
    half = x.shape[1] // 2
    if half < 2:
        return None
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    n = x.shape[1]
    within = float(np.mean(np.var(x, axis=1, ddof=1)))
    if not within > 0.0:
        return float("nan")
    between = n * float(np.var(np.mean(x, axis=1), ddof=1))
    var_plus = (n - 1) / n * within + between / n
    return math.sqrt(var_plus / within)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = next_fast_len(2 * n)
    centered = x - x.mean(axis=-1, keepdims=True)
    f = rfft(centered, n=size, axis=-1)
    return irfft(f * np.conj(f), n=size, axis=-1)[..., :n] / n


def _ess(x: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence."""
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = _autocovariance(x)
    chain_var = acov[:, 0] * n / (n - 1)
    within = float(np.mean(chain_var))
    var_plus = within * (n - 1) / n + (float(np.var(np.mean(x, axis=1), ddof=1)) if m > 1 else 0.0)
    if not var_plus > 0.0:
        return float("nan")
    rho = 1.0 - (within - np.mean(acov, axis=0)) / var_plus
    rho[0] = 1.0
    pairs = []
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        pairs.append(min(pair, pairs[-1]) if pairs else pair)
    tau = max(-1.0 + 2.0 * math.fsum(pairs), 1.0 / math.log10(m * n))
    return min(m * n / tau, m * n * math.log10(m * n))


def _scalar_diagnostics(x: np.ndarray) -> Dict[str, float]:
    split = _split_chains(x)
    out = {"mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)) if x.size > 1 else float("nan")}
    if split is None or not np.ptp(x) > 0.0:
        out.update(rhat_bulk=float("nan"), rhat_tail=float("nan"), rhat=float("nan"),
                   ess_bulk=float("nan"), ess_tail=float("nan"), mcse_mean=float("nan"))
        return out
    z = _rank_normalize(split)
    folded = _rank_normalize(np.abs(split - np.median(split)))
    rhat_bulk, rhat_tail = _rhat(z), _rhat(folded)
    ess_bulk = _ess(z)
    q05, q95 = np.quantile(split, [0.05, 0.95])
    tails = [_ess((split <= q05).astype(float)), _ess((split >= q95).astype(float))]
    tails = [t for t in tails if not math.isnan(t)]
    out.update(
        rhat_bulk=rhat_bulk,
        rhat_tail=rhat_tail,
        rhat=float(np.nanmax([rhat_bulk, rhat_tail])),
        ess_bulk=ess_bulk,
        ess_tail=min(tails) if tails else float("nan"),
        mcse_mean=out["sd"] / math.sqrt(ess_bulk) if ess_bulk > 0 else float("nan"),
    )
    return out


@dataclass
class DiagnosticsReport:
    """Per-scalar convergence statistics with an overall status."""
    table: pd.DataFrame
    status: ConvergenceStatus
    max_rhat: float
    flagged: List[str]
    undefined: List[str]
    split_only: bool
    threshold: float

    def to_csv(self, path: Union[str, Path]) -> None:
        self.table.to_csv(path, index=False, float_format="%.17g")


def diagnostics(draws: Union["PosteriorDraws", np.ndarray], names: Optional[Sequence[str]] = None,
                threshold: float = 1.01, fail: float = 1.05) -> DiagnosticsReport:
    """
    Rank-normalized split R-hat (max of bulk and folded) and bulk/tail ESS for
    every scalar. Scalars with zero variance are reported as undefined.
    Arrays are shaped (chains, draws, scalars).
    """
    if isinstance(draws, PosteriorDraws):
        names = draws.names
        values = draws.draws
    else:
        values = np.asarray(draws, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        names = list(names) if names is not None else [f"x{i}" for i in range(values.shape[2])]
    rows = []
    for k, name in enumerate(names):
        stats = _scalar_diagnostics(values[:, :, k])
        stats["name"] = name
        rows.append(stats)
    table = pd.DataFrame(rows, columns=["name", "mean", "sd", "rhat_bulk", "rhat_tail", "rhat",
                                        "ess_bulk", "ess_tail", "mcse_mean"])
    undefined = table.loc[table["rhat"].isna(), "name"].tolist()
    flagged = table.loc[table["rhat"] > threshold, "name"].tolist()
    table["flagged"] = table["name"].isin(flagged)
    table["undefined"] = table["name"].isin(undefined)
    max_rhat = float(table["rhat"].max()) if table["rhat"].notna().any() else float("nan")
    if not math.isnan(max_rhat) and max_rhat > fail:
        status = ConvergenceStatus.FAILED
    elif flagged or undefined:
        status = ConvergenceStatus.WARNING
    else:
        status = ConvergenceStatus.CONVERGED
    split_only = values.shape[0] == 1
    log.info("diagnostics.done status=%s max_rhat=%.4f flagged=%d undefined=%d split_only=%s",
             status.value, max_rhat, len(flagged), len(undefined), split_only)
    return DiagnosticsReport(table=table, status=status, max_rhat=max_rhat, flagged=flagged,
                             undefined=undefined, split_only=split_only, threshold=threshold)


# Posterior container

@dataclass
class PosteriorDraws:
    """
    Retained draws of every global scalar, shaped (chains, draws, scalars),
    plus thinned per-match mixture rates, thinned per-match weights and
    bookmaker-layer rates (chains, rate draws, matches) and their posterior means.
    """
    names: List[str]
    draws: np.ndarray
    gamma_home: np.ndarray
    gamma_away: np.ndarray
    match_means: Dict[str, np.ndarray]
    metadata: Dict[str, Any]
    match_draws: Dict[str, np.ndarray] = field(default_factory=dict)
    acceptance: List[Dict[str, float]] = field(default_factory=list)
    elapsed: List[float] = field(default_factory=list)
    report: Optional[DiagnosticsReport] = None

    @property
    def n_chains(self) -> int:
        return int(self.draws.shape[0])

    @property
    def n_retained(self) -> int:
        return int(self.draws.shape[1])

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_retained

    @property
    def n_teams(self) -> int:
        return int(self.metadata["n_teams"])

    @property
    def n_seasons(self) -> int:
        return int(self.metadata["n_seasons"])

    @property
    def away_intercept(self) -> bool:
        return bool(self.metadata.get("away_intercept", False))

    def flat(self) -> np.ndarray:
        return self.draws.reshape(self.n_draws, len(self.names))

    def column(self, name: str) -> np.ndarray:
        """All draws of one scalar, chains concatenated."""
        return self.flat()[:, self.names.index(name)]

    def effects(self, kind: str) -> np.ndarray:
        """(n_draws, n_teams, n_seasons) attack ('att') or defence ('def') draws."""
        start = self.names.index(f"{kind}[0][0]")
        size = self.n_teams * self.n_seasons
        return self.flat()[:, start:start + size].reshape(self.n_draws, self.n_teams, self.n_seasons)

    def thinned_indices(self, max_draws: int) -> np.ndarray:
        """Evenly spaced flat draw indices, at most max_draws of them."""
        count = min(max_draws, self.n_draws)
        return np.unique(np.linspace(0, self.n_draws - 1, count).round().astype(int))

    def rate_draws(self) -> Tuple[np.ndarray, np.ndarray]:
        """Thinned mixture rates, chains concatenated: two (n_rate_draws, n_matches) arrays."""
        m = self.gamma_home.shape[-1]
        return self.gamma_home.reshape(-1, m), self.gamma_away.reshape(-1, m)

    def match_summary(self) -> pd.DataFrame:
        """Posterior mean, sd and quantiles of each per-match weight and rate, one row per (parameter, match)."""
        rows = []
        for key in _PER_MATCH_BLOCKS:
            if key not in self.match_draws:
                continue
            values = self.match_draws[key].reshape(-1, self.match_draws[key].shape[-1])
            q = np.quantile(values, [0.025, 0.25, 0.5, 0.75, 0.975], axis=0)
            sd = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.full(values.shape[1], np.nan)
            for m in range(values.shape[1]):
                rows.append({"name": f"{key}[{m}]", "mean": values[:, m].mean(), "sd": sd[m],
                             "q2.5": q[0, m], "q25": q[1, m], "q50": q[2, m], "q75": q[3, m], "q97.5": q[4, m]})
        return pd.DataFrame(rows, columns=["name", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5"])

    @classmethod
    def from_states(cls, chains: Sequence[Sequence[ModelParameters]], data: ModelData,
                    away_intercept: bool = False) -> "PosteriorDraws":
        """Posterior made of given parameter states; every state is also a rate draw."""
        names = ModelParameters.scalar_names(data.n_teams, data.n_seasons, away_intercept=away_intercept,
                                             per_match=False)
        draws = np.stack([[s.to_vector(away_intercept, per_match=False) for s in chain] for chain in chains])
        rates = [[mixture_rates_array(s, data) for s in chain] for chain in chains]
        gamma_home = np.array([[r[0] for r in chain] for chain in rates]).reshape(len(chains), -1, data.n_matches)
        gamma_away = np.array([[r[1] for r in chain] for chain in rates]).reshape(len(chains), -1, data.n_matches)
        states = [s for chain in chains for s in chain]
        match_draws = {k: np.array([[getattr(s, k) for s in chain] for chain in chains]) for k in _PER_MATCH_BLOCKS}
        means = {k: np.mean([getattr(s, k) for s in states], axis=0) for k in _PER_MATCH_BLOCKS}
        metadata = {
            "n_teams": data.n_teams, "n_seasons": data.n_seasons, "n_matches": data.n_matches,
            "n_chains": len(chains), "rate_thin": 1, "away_intercept": away_intercept,
        }
        return cls(names=names, draws=draws, gamma_home=gamma_home, gamma_away=gamma_away,
                   match_means=means, metadata=metadata, match_draws=match_draws)

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        chain = np.repeat(np.arange(self.n_chains), self.n_retained)
        draw = np.tile(np.arange(self.n_retained), self.n_chains)
        frame = pd.DataFrame(self.flat(), columns=self.names)
        frame.insert(0, "draw", draw)
        frame.insert(0, "chain", chain)
        frame.to_csv(directory / DRAWS_FILE, index=False, float_format="%.17g")
        np.savez_compressed(directory / RATE_DRAWS_FILE, gamma_home=self.gamma_home, gamma_away=self.gamma_away,
                            **self.match_draws)
        means = pd.DataFrame(self.match_means)
        means.insert(0, "match", np.arange(len(means)))
        means.to_csv(directory / MATCH_MEANS_FILE, index=False, float_format="%.17g")
        meta = dict(self.metadata)
        meta["acceptance"] = [{k: round(float(v), 6) for k, v in a.items()} for a in self.acceptance]
        with open(directory / META_FILE, "w", encoding="utf-8") as f:
            yaml.safe_dump(meta, f, default_flow_style=False, sort_keys=True)
        log.info("draws.saved directory=%s chains=%d retained=%d", directory, self.n_chains, self.n_retained)

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "PosteriorDraws":
        directory = Path(directory)
        missing = [f for f in (DRAWS_FILE, RATE_DRAWS_FILE, MATCH_MEANS_FILE, META_FILE)
                   if not (directory / f).exists()]
        if missing:
            raise MissingDraws(f"Missing posterior files in {directory}: {missing}", directory=str(directory))
        with open(directory / META_FILE, "r", encoding="utf-8") as f:
            meta = yaml.safe_load(f)
        acceptance = meta.pop("acceptance", [])
        frame = pd.read_csv(directory / DRAWS_FILE, float_precision="round_trip")
        names = [c for c in frame.columns if c not in ("chain", "draw")]
        n_chains = int(frame["chain"].max()) + 1
        values = frame[names].to_numpy(dtype=float).reshape(n_chains, -1, len(names))
        rates = np.load(directory / RATE_DRAWS_FILE)
        means_frame = pd.read_csv(directory / MATCH_MEANS_FILE, float_precision="round_trip")
        match_means = {k: means_frame[k].to_numpy(dtype=float) for k in _PER_MATCH_BLOCKS}
        match_draws = {k: rates[k] for k in _PER_MATCH_BLOCKS if k in rates.files}
        return cls(names=names, draws=values, gamma_home=rates["gamma_home"], gamma_away=rates["gamma_away"],
                   match_means=match_means, metadata=meta, match_draws=match_draws, acceptance=acceptance)


def _merge(results: List[ChainResult], data: ModelData, config: SamplerConfig, seed: int,
           away_intercept: bool, rate_thin: int) -> PosteriorDraws:
    results = sorted(results, key=lambda r: r.chain_id)
    names = ModelParameters.scalar_names(data.n_teams, data.n_seasons, away_intercept=away_intercept,
                                         per_match=False)
    total = sum(r.draws.shape[0] for r in results)
    means = {k: sum(r.match_sums[k] for r in results) / max(total, 1) for k in _PER_MATCH_BLOCKS}
    metadata = {
        "n_teams": data.n_teams,
        "n_seasons": data.n_seasons,
        "n_matches": data.n_matches,
        "n_chains": len(results),
        "n_iterations": config.n_iterations,
        "n_burnin": config.n_burnin,
        "seed": seed,
        "rate_thin": rate_thin,
        "away_intercept": away_intercept,
        "blocks": list(config.blocks),
    }
    return PosteriorDraws(
        names=names,
        draws=np.stack([r.draws for r in results]),
        gamma_home=np.stack([r.gamma_home for r in results]),
        gamma_away=np.stack([r.gamma_away for r in results]),
        match_means=means,
        metadata=metadata,
        match_draws={k: np.stack([r.match_draws[k] for r in results]) for k in _PER_MATCH_BLOCKS},
        acceptance=[r.acceptance for r in results],
        elapsed=[r.elapsed for r in results],
    )


def _raise_for_chain(chain_id: int, error: Exception) -> NoReturn:
    """Re-raise a chain error so it names the chain."""
    if isinstance(error, OddsModelError):
        error.context.metadata.setdefault("chain", chain_id)
        raise error
    raise ChainFailure(f"Chain {chain_id} failed: {error}", chain=chain_id,
                       cause=type(error).__name__) from error


async def _run_parallel(data: ModelData, priors: PriorConfig, config: SamplerConfig, seed: int,
                        away_intercept: bool, rate_thin: int) -> List[ChainResult]:
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(config.workers)

    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        async def one(chain_id: int) -> ChainResult:
            async with semaphore:
                try:
                    return await loop.run_in_executor(
                        pool, run_chain, data, priors, config, chain_id, seed, away_intercept, rate_thin)
                except Exception as e:
                    _raise_for_chain(chain_id, e)

        return list(await asyncio.gather(*(one(c) for c in range(config.n_chains))))


def run_sampler(data: Union[ModelData, Dataset], priors: PriorConfig, config: SamplerConfig,
                seed: int = 0, away_intercept: bool = False, rate_thin: Optional[int] = None,
                rhat_threshold: Optional[float] = None) -> PosteriorDraws:
    """Run every chain (in parallel when config.workers > 1), merge and attach diagnostics."""
    if isinstance(data, Dataset):
        data = ModelData.from_dataset(data)
    rate_thin = rate_thin or config.rate_thin
    log.info("sampler.start chains=%d iterations=%d burnin=%d matches=%d teams=%d seasons=%d workers=%d",
             config.n_chains, config.n_iterations, config.n_burnin, data.n_matches,
             data.n_teams, data.n_seasons, config.workers)
    try:
        if config.workers > 1 and config.n_chains > 1:
            results = asyncio.run(_run_parallel(data, priors, config, seed, away_intercept, rate_thin))
        else:
            results = []
            for c in range(config.n_chains):
                try:
                    results.append(run_chain(data, priors, config, c, seed, away_intercept, rate_thin))
                except Exception as e:
                    _raise_for_chain(c, e)
    except OddsModelError as e:
        log.error("sampler.chain_failed chain=%s error=%s", e.context.metadata.get("chain"), e)
        raise

    posterior = _merge(results, data, config, seed, away_intercept, rate_thin)
    report = diagnostics(posterior, threshold=rhat_threshold or config.rhat_threshold, fail=config.rhat_fail)
    posterior.report = report
    metrics = MetricsManager.get()
    for chain_id, acceptance in enumerate(posterior.acceptance):
        metrics.record_acceptance(chain_id, acceptance)
    metrics.record_max_rhat(report.max_rhat)
    return posterior

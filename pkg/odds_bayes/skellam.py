"""
Poisson-difference (Skellam) probabilities and their inversion.

The three-way probabilities of two independent Poisson scores are computed
from truncated Poisson pmf vectors. implicit_rates solves the two independent
equations P(win) = p_win, P(draw) = p_draw for the rate pair with damped
Newton steps in log space and a finite-difference Jacobian.
"""
from __future__ import annotations

import logging
import math
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import gammaln, ndtri

from .errors import NoConvergence
from .odds import ProbTriple

log = logging.getLogger(__name__)

PMF_CUTOFF = 1e-16
RATE_CAP = 12.0
RATE_FLOOR = 0.05
MAX_ITERATIONS = 200
RESIDUAL_TOL = 1e-7
FD_STEP = 1e-6
RESTART_TOTALS: Tuple[float, ...] = (2.5, 1.5, 4.0)

_LOG_FACTORIAL = gammaln(np.arange(2048) + 1.0)


class RatePair(BaseModel):
    """
    Home and away Poisson scoring intensities. Any positive finite pair is
    accepted here; implicit_rates only returns pairs inside [RATE_FLOOR, cap].
    """
    model_config = ConfigDict(frozen=True)

    theta_home: float
    theta_away: float

    @model_validator(mode="after")
    def _check_rates(self) -> "RatePair":
        for value in (self.theta_home, self.theta_away):
            if not math.isfinite(value) or value <= 0.0:
                raise ValueError(f"Scoring rates must be positive and finite, got {value}")
        return self

    def as_tuple(self) -> Tuple[float, float]:
        return (self.theta_home, self.theta_away)


def _support_size(theta_max: float) -> int:
    """Goals needed so the Poisson tail beyond is negligible."""
    return int(theta_max + 12.0 * math.sqrt(theta_max) + 30.0)


def poisson_pmf_vector(theta: float, size: int) -> np.ndarray:
    k = np.arange(size)
    return np.exp(k * math.log(theta) - theta - _LOG_FACTORIAL[:size])


def poisson_pmf_matrix(theta: np.ndarray, size: int) -> np.ndarray:
    """Rows are Poisson pmfs over 0..size-1 for each rate in theta."""
    theta = np.asarray(theta, dtype=float)
    k = np.arange(size)
    return np.exp(k * np.log(theta)[..., None] - theta[..., None] - _LOG_FACTORIAL[:size])


def skellam_pmf(k: int, rates: RatePair) -> float:
    """P(Y1 - Y2 = k) by direct double summation; terms below 1e-16 are dropped."""
    theta1, theta2 = rates.as_tuple()
    a, b = max(k, 0), max(-k, 0)
    size = _support_size(max(theta1, theta2)) + abs(k)
    p1 = poisson_pmf_vector(theta1, size)
    p2 = poisson_pmf_vector(theta2, size)
    n = size - abs(k)
    terms = p1[a:a + n] * p2[b:b + n]
    return float(min(1.0, math.fsum(terms[terms >= PMF_CUTOFF])))


def skellam_pmf_array(ks: Iterable[int], rates: RatePair) -> np.ndarray:
    """Skellam pmf at several differences from one outer-product grid."""
    ks = np.asarray(list(ks), dtype=int)
    theta1, theta2 = rates.as_tuple()
    size = _support_size(max(theta1, theta2)) + int(np.abs(ks).max(initial=0))
    grid = np.outer(poisson_pmf_vector(theta1, size), poisson_pmf_vector(theta2, size))
    return np.array([np.trace(grid, offset=-int(k)) for k in ks])


def _three_way(theta1: float, theta2: float) -> Tuple[float, float, float]:
    size = _support_size(max(theta1, theta2))
    p1 = poisson_pmf_vector(theta1, size)
    p2 = poisson_pmf_vector(theta2, size)
    win = float(np.dot(p1[1:], np.cumsum(p2)[:-1]))
    draw = float(np.dot(p1, p2))
    loss = float(np.dot(p2[1:], np.cumsum(p1)[:-1]))
    total = win + draw + loss
    return win / total, draw / total, loss / total


def three_way_probs(rates: RatePair) -> ProbTriple:
    """Home win, draw and away win probabilities for independent Poisson scores."""
    return ProbTriple.from_values(_three_way(*rates.as_tuple()))


def three_way_probs_array(theta1: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """Vectorised three-way probabilities; returns shape (n, 3)."""
    theta1 = np.atleast_1d(np.asarray(theta1, dtype=float))
    theta2 = np.atleast_1d(np.asarray(theta2, dtype=float))
    size = _support_size(float(max(theta1.max(), theta2.max())))
    p1 = poisson_pmf_matrix(theta1, size)
    p2 = poisson_pmf_matrix(theta2, size)
    win = np.sum(p1[:, 1:] * np.cumsum(p2, axis=1)[:, :-1], axis=1)
    draw = np.sum(p1 * p2, axis=1)
    loss = np.sum(p2[:, 1:] * np.cumsum(p1, axis=1)[:, :-1], axis=1)
    out = np.stack([win, draw, loss], axis=1)
    return out / out.sum(axis=1, keepdims=True)


def score_grid(theta1: float, theta2: float, max_goals: int) -> np.ndarray:
    """P(Y1=i, Y2=j) for i, j in 0..max_goals (not renormalized)."""
    size = max_goals + 1
    return np.outer(poisson_pmf_vector(theta1, size), poisson_pmf_vector(theta2, size))


def _heuristic_start(probs: ProbTriple, total: float) -> Tuple[float, float]:
    """Rates summing to total whose normal approximation matches p_win - p_loss."""
    edge = probs.p_win - probs.p_loss
    diff = math.sqrt(total) * float(ndtri(min(max((1.0 + edge) / 2.0, 1e-9), 1 - 1e-9)))
    diff = max(-0.9 * total, min(0.9 * total, diff))
    return max((total + diff) / 2.0, RATE_FLOOR), max((total - diff) / 2.0, RATE_FLOOR)


def _newton(target: Tuple[float, float], start: Tuple[float, float], cap: float,
            tol: float, max_iter: int) -> Tuple[np.ndarray, float, int]:
    lower, upper = math.log(RATE_FLOOR), math.log(cap)
    x = np.clip(np.log(np.asarray(start, dtype=float)), lower, upper)

    def residual(theta: np.ndarray) -> np.ndarray:
        win, draw, _ = _three_way(float(theta[0]), float(theta[1]))
        return np.array([win - target[0], draw - target[1]])

    theta = np.exp(x)
    r = residual(theta)
    norm = float(np.max(np.abs(r)))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if norm <= tol * 1e-6:
            break
        jac = np.empty((2, 2))
        for i in range(2):
            h = FD_STEP * max(1.0, theta[i])
            bumped = theta.copy()
            bumped[i] += h
            # chain rule to log space
            jac[:, i] = (residual(bumped) - r) / h * theta[i]
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        improved = False
        for _ in range(40):
            x_new = np.clip(x + t * step, lower, upper)
            theta_new = np.exp(x_new)
            r_new = residual(theta_new)
            norm_new = float(np.max(np.abs(r_new)))
            if norm_new < norm:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        x, theta, r, norm = x_new, theta_new, r_new, norm_new
    return theta, norm, iterations


def implicit_rates(probs: ProbTriple, init: Optional[RatePair] = None, cap: float = RATE_CAP,
                   tol: float = RESIDUAL_TOL, max_iter: int = MAX_ITERATIONS,
                   restart_totals: Sequence[float] = RESTART_TOTALS) -> RatePair:
    """
    Rate pair whose three-way probabilities reproduce probs.

    Starts from init when given, then from heuristic starts at each total in
    restart_totals. Raises NoConvergence when no start reaches the tolerance
    with rates inside [RATE_FLOOR, cap].
    """
    probs.require_simplex(interior=True)
    target = (probs.p_win, probs.p_draw)
    starts = [init.as_tuple()] if init is not None else []
    starts += [_heuristic_start(probs, total) for total in restart_totals]

    best_norm = math.inf
    for start in starts:
        theta, norm, iterations = _newton(target, start, cap, tol, max_iter)
        if norm <= tol:
            log.debug("skellam.inverted theta=(%.6f, %.6f) residual=%.2e iterations=%d",
                      theta[0], theta[1], norm, iterations)
            return RatePair(theta_home=float(theta[0]), theta_away=float(theta[1]))
        best_norm = min(best_norm, norm)
    raise NoConvergence("No rate pair reproduces these probabilities",
                        probs=probs.as_tuple(), residual=best_norm)

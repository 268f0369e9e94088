import math

import numpy as np
import pytest

from odds_bayes.config import PriorConfig
from odds_bayes.data import build_dataset
from odds_bayes.model import (
    ModelData,
    ModelParameters,
    beta_logpdf,
    gradient_mu_att,
    half_cauchy_logpdf,
    log_likelihood_bookmakers,
    log_likelihood_scores,
    log_posterior,
    log_prior,
    mixture_rates,
    score_rates,
    score_rates_array,
    truncnorm_logpdf,
    zero_sum,
)


def two_team_data(y_home=(0,), y_away=(0,), bm=None) -> ModelData:
    n = len(y_home)
    bm = bm or []
    return ModelData(
        n_teams=2, n_seasons=1,
        home=np.zeros(n, dtype=int), away=np.ones(n, dtype=int), season=np.zeros(n, dtype=int),
        y_home=np.array(y_home), y_away=np.array(y_away),
        bm_match=np.array([m for m, _, _ in bm], dtype=int),
        bm_home=np.array([h for _, h, _ in bm], dtype=float),
        bm_away=np.array([a for _, _, a in bm], dtype=float),
    )


def test_score_rates_all_zero():
    data = two_team_data()
    params = ModelParameters.zeros(2, 1, 1)
    assert score_rates(params, data, 0).as_tuple() == (1.0, 1.0)


def test_score_rates_home_advantage_and_effects():
    data = ModelData(n_teams=3, n_seasons=1, home=np.array([0]), away=np.array([1]), season=np.array([0]),
                     y_home=np.array([0]), y_away=np.array([0]), bm_match=np.zeros(0, dtype=int),
                     bm_home=np.zeros(0), bm_away=np.zeros(0))
    params = ModelParameters.zeros(3, 1, 1)
    params.mu = 0.2
    params.att[0, 0] = 0.1
    params.defence[1, 0] = -0.1
    theta = score_rates(params, data, 0)
    assert theta.theta_home == pytest.approx(math.exp(0.2))
    assert theta.theta_away == pytest.approx(1.0)


@pytest.mark.parametrize("p,expected", [(1.0, 2.0), (0.0, 1.0), (0.5, 1.5)])
def test_mixture_rates(p, expected):
    data = two_team_data()
    params = ModelParameters.zeros(2, 1, 1)
    params.mu = math.log(2.0)
    params.p_home[:] = p
    params.lambda_home[:] = 1.0
    assert mixture_rates(params, data, 0).theta_home == pytest.approx(expected)


def test_log_likelihood_scores():
    assert log_likelihood_scores(ModelParameters.zeros(2, 1, 0), ModelData.empty(2, 1)) == 0.0
    data = two_team_data()
    assert log_likelihood_scores(ModelParameters.zeros(2, 1, 1), data) == pytest.approx(-2.0)


def test_log_likelihood_bookmakers():
    params = ModelParameters.zeros(2, 1, 1)
    assert log_likelihood_bookmakers(params, two_team_data()) == 0.0
    data = two_team_data(bm=[(0, 3.0, 3.0)])
    params.lambda_home[:] = 3.0
    params.lambda_away[:] = 3.0
    params.tau1 = params.tau2 = 0.1
    mode = math.log(1.0 / (0.1 * math.sqrt(2.0 * math.pi)))
    assert log_likelihood_bookmakers(params, data) == pytest.approx(2 * mode, abs=1e-9)


def test_prior_densities():
    assert half_cauchy_logpdf(2.5, 2.5) == pytest.approx(math.log(2.0 / (math.pi * 2.5 * 2.0)))
    assert half_cauchy_logpdf(-1.0, 2.5) == -math.inf
    p = np.array([0.0, 0.3, 1.0])
    np.testing.assert_allclose(beta_logpdf(p, 1.0, 1.0), 0.0)
    assert truncnorm_logpdf(-0.5, 1.0, 1.0) == -math.inf
    # half-Normal at zero mean doubles the Normal density
    assert truncnorm_logpdf(0.5, 0.0, 1.0) == pytest.approx(math.log(2.0) - 0.125 - 0.5 * math.log(2 * math.pi))


def test_log_prior_effects_closed_form():
    priors = PriorConfig()
    params = ModelParameters.zeros(2, 2, 0)
    params.sigma_att = params.sigma_def = 1.0
    base = log_prior(params, priors)
    params.att[0, 0], params.att[1, 0] = 0.5, -0.5
    # each nonzero entry lowers its own term and raises the next season's mismatch
    changed = log_prior(params, priors)
    expected = 2 * (-0.125) + 2 * (-0.125)
    assert changed - base == pytest.approx(expected)


def test_log_posterior_support():
    data = two_team_data(y_home=(1,), y_away=(2,))
    priors = PriorConfig()
    params = ModelParameters.zeros(2, 1, 1)
    assert math.isfinite(log_posterior(params, data, priors))
    params.p_home[:] = 1.0
    assert math.isfinite(log_posterior(params, data, priors))
    params.sigma_att = 0.0
    assert log_posterior(params, data, priors) == -math.inf
    params.sigma_att = 1.0
    params.lambda_home[:] = -1.0
    assert log_posterior(params, data, priors) == -math.inf


def test_zero_sum_and_free_setters():
    full = zero_sum(np.array([[0.2, -0.1], [0.3, 0.4]]))
    np.testing.assert_allclose(full.sum(axis=0), 0.0, atol=1e-15)
    params = ModelParameters.zeros(3, 1, 0)
    params.set_free_att(0, np.array([0.2, 0.3]))
    assert params.att[2, 0] == pytest.approx(-0.5)


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(3)
    n = 30
    data = ModelData(n_teams=3, n_seasons=2, home=rng.integers(0, 3, n), away=rng.integers(0, 3, n),
                     season=rng.integers(0, 2, n), y_home=rng.poisson(1.5, n), y_away=rng.poisson(1.0, n),
                     bm_match=np.zeros(0, dtype=int), bm_home=np.zeros(0), bm_away=np.zeros(0))
    priors = PriorConfig()
    params = ModelParameters.zeros(3, 2, n)
    params.mu = 0.3
    params.set_free_att(0, np.array([0.1, -0.2]))
    params.set_free_att(1, np.array([0.15, -0.1]))
    params.sigma_att = 0.4
    d_mu, d_att = gradient_mu_att(params, data, priors, team=0, season=0)

    h = 1e-6
    up, down = params.copy(), params.copy()
    up.mu += h
    down.mu -= h
    fd_mu = (log_posterior(up, data, priors) - log_posterior(down, data, priors)) / (2 * h)
    up, down = params.copy(), params.copy()
    up.set_free_att(0, params.att[:-1, 0] + np.array([h, 0.0]))
    down.set_free_att(0, params.att[:-1, 0] - np.array([h, 0.0]))
    fd_att = (log_posterior(up, data, priors) - log_posterior(down, data, priors)) / (2 * h)
    assert d_mu == pytest.approx(fd_mu, rel=1e-5, abs=1e-6)
    assert d_att == pytest.approx(fd_att, rel=1e-5, abs=1e-6)


def test_vector_view_names_align():
    params = ModelParameters.zeros(2, 2, 3)
    params.mu_away = 0.1
    names = ModelParameters.scalar_names(2, 2, 3, away_intercept=True)
    vector = params.to_vector(away_intercept=True)
    assert len(names) == vector.shape[0]
    assert vector[names.index("mu_away")] == pytest.approx(0.1)
    back = ModelParameters.from_vector(vector, 2, 2, 3, away_intercept=True)
    assert back.mu_away == pytest.approx(0.1)
    assert len(ModelParameters.scalar_names(2, 2, 3, per_match=False)) == 9 + 8


def test_model_data_from_dataset(make_record):
    records = [
        make_record("A", "B", (2, 1), odds={"Bet365": (1.8, 3.6, 4.5), "BetAndWin": (1.85, 3.5, 4.4)}),
        make_record("B", "C", (0, 0), line=3, odds={}),
    ]
    dataset = build_dataset(records, "basic", {"Bet365": "B365", "BetAndWin": "BW"})
    data = ModelData.from_dataset(dataset)
    assert data.n_teams == 3
    assert data.n_matches == 2
    assert data.n_entries == 2
    np.testing.assert_array_equal(data.bookmaker_counts(), [2, 0])
    params = ModelParameters.initial(data)
    assert params.is_valid()
    assert params.lambda_home[0] == pytest.approx(data.bm_home.mean())


def perturbed_state(data: ModelData, seed: int) -> ModelParameters:
    rng = np.random.default_rng(seed)
    params = ModelParameters.initial(data)
    for s in range(data.n_seasons):
        params.set_free_att(s, rng.normal(0.0, 0.3, data.n_teams - 1))
        params.set_free_def(s, rng.normal(0.0, 0.3, data.n_teams - 1))
    params.p_home = rng.uniform(0.2, 0.8, data.n_matches)
    params.p_away = rng.uniform(0.2, 0.8, data.n_matches)
    params.lambda_home = params.lambda_home * rng.uniform(0.8, 1.2, data.n_matches)
    return params


def test_log_posterior_ignores_match_order(small_dataset):
    data = ModelData.from_dataset(small_dataset)
    params = perturbed_state(data, seed=3)
    perm = np.random.default_rng(4).permutation(data.n_matches)
    position = np.empty_like(perm)
    position[perm] = np.arange(data.n_matches)
    shuffled = ModelData(
        n_teams=data.n_teams, n_seasons=data.n_seasons,
        home=data.home[perm], away=data.away[perm], season=data.season[perm],
        y_home=data.y_home[perm], y_away=data.y_away[perm],
        bm_match=position[data.bm_match], bm_home=data.bm_home, bm_away=data.bm_away,
    )
    moved = params.copy()
    for key in ("p_home", "p_away", "lambda_home", "lambda_away"):
        setattr(moved, key, getattr(params, key)[perm])
    expected = log_posterior(params, data, PriorConfig())
    assert math.isfinite(expected)
    assert log_posterior(moved, shuffled, PriorConfig()) == pytest.approx(expected, rel=1e-12)


def test_attack_defence_shift_leaves_the_likelihood(small_dataset):
    data = ModelData.from_dataset(small_dataset)
    params = perturbed_state(data, seed=5)
    shifted = params.copy()
    shifted.att = params.att + 0.4
    shifted.defence = params.defence - 0.4
    before = score_rates_array(params, data)
    after = score_rates_array(shifted, data)
    np.testing.assert_allclose(after[0], before[0], rtol=1e-12)
    np.testing.assert_allclose(after[1], before[1], rtol=1e-12)
    assert log_likelihood_scores(shifted, data) == pytest.approx(log_likelihood_scores(params, data), rel=1e-10)

import math
from typing import List, Optional

import numpy as np
import pytest

from odds_bayes.config import PredictConfig, PriorConfig
from odds_bayes.data import TeamIndex
from odds_bayes.errors import IncompleteFixtures, UnknownTeam
from odds_bayes.mcmc import PosteriorDraws
from odds_bayes.model import ModelData, ModelParameters
from odds_bayes.predict import (
    Fixture,
    Forecaster,
    ReplicatedScores,
    bayesian_p_value,
    forecast_from_rates,
    forecast_match,
    forecasts_frame,
    goal_difference_table,
    is_double_round_robin,
    posterior_predictive_check,
    replicate_from_rates,
    replicate_scores,
    score_grids_frame,
    simulate_season,
)
from odds_bayes.skellam import RatePair, three_way_probs

TEAMS = TeamIndex(["A", "B", "C", "D"])


def round_robin(season: int = 1) -> List[Fixture]:
    names = TEAMS.names
    pairs = [(h, a) for h in names for a in names if h != a]
    return [Fixture(match_id=k, season=season, home_team=h, away_team=a) for k, (h, a) in enumerate(pairs)]


def training_data() -> ModelData:
    home = np.array([0, 1, 2, 3])
    away = np.array([1, 2, 3, 0])
    return ModelData(n_teams=4, n_seasons=1, home=home, away=away, season=np.zeros(4, dtype=int),
                     y_home=np.array([1, 0, 2, 1]), y_away=np.array([0, 0, 1, 3]),
                     bm_match=np.zeros(0, dtype=int), bm_home=np.zeros(0), bm_away=np.zeros(0))


def make_posterior(mu: float = math.log(2.0), att: Optional[np.ndarray] = None, n_states: int = 8,
                   sigma: float = 0.3, tau: float = 0.2) -> PosteriorDraws:
    data = training_data()
    states = []
    for k in range(n_states):
        p = ModelParameters.zeros(4, 1, data.n_matches)
        p.mu = mu
        if att is not None:
            p.att[:, 0] = att
        p.p_home[:] = 1.0
        p.p_away[:] = 1.0
        p.sigma_att = p.sigma_def = sigma
        p.tau1 = p.tau2 = tau
        p.alpha1, p.alpha2 = 1.4, 1.1
        states.append(p)
    return PosteriorDraws.from_states([states[: n_states // 2], states[n_states // 2:]], data)


def test_forecast_from_constant_rates():
    forecast = forecast_from_rates(np.full(50, 2.0), np.full(50, 1.0), max_goals=12)
    assert forecast.probs.as_tuple() == pytest.approx(three_way_probs(RatePair(theta_home=2.0, theta_away=1.0))
                                                      .as_tuple(), abs=1e-12)
    assert forecast.grid.sum() == pytest.approx(1.0)
    assert forecast.grid_margins() == pytest.approx(forecast.probs.as_tuple(), abs=1e-4)
    assert forecast.tail_mass < 1e-4
    assert forecast.most_likely_score() in {(1, 0), (2, 0), (1, 1), (2, 1)}
    assert forecast.mean_rates.as_tuple() == pytest.approx((2.0, 1.0))


def test_forecast_averages_probabilities_not_rates():
    forecast = forecast_from_rates(np.array([0.5, 3.5]), np.array([1.0, 1.0]))
    a = three_way_probs(RatePair(theta_home=0.5, theta_away=1.0)).as_array()
    b = three_way_probs(RatePair(theta_home=3.5, theta_away=1.0)).as_array()
    np.testing.assert_allclose(forecast.probs.as_array(), (a + b) / 2, atol=1e-12)


def test_score_rates_from_draws():
    forecaster = Forecaster(make_posterior(), TEAMS, use_odds=False)
    theta_home, theta_away = forecaster.score_rates([Fixture(0, 1, "A", "B")])
    np.testing.assert_allclose(theta_home, 2.0)
    np.testing.assert_allclose(theta_away, 1.0)
    forecast = forecaster.forecast_match(Fixture(0, 1, "A", "B"))
    assert forecast.probs.as_tuple() == pytest.approx(
        three_way_probs(RatePair(theta_home=2.0, theta_away=1.0)).as_tuple(), abs=1e-12)


def test_unknown_team():
    forecaster = Forecaster(make_posterior(), TEAMS)
    with pytest.raises(UnknownTeam):
        forecaster.forecast_match(Fixture(0, 1, "A", "Z"))
    with pytest.raises(UnknownTeam):
        Forecaster(make_posterior(), TeamIndex(["A", "B"]))


def test_training_fixture_uses_stored_rates():
    posterior = make_posterior()
    forecaster = Forecaster(posterior, TEAMS)
    gamma_home, gamma_away = forecaster.fixture_rates(Fixture(3, 1, "D", "A", train_index=3))
    stored_home, _ = posterior.rate_draws()
    np.testing.assert_array_equal(gamma_home, stored_home[:, 3])


def test_bookmaker_rates_pull_the_forecast():
    posterior = make_posterior(mu=0.0, n_states=40)
    fixture = Fixture(7, 1, "A", "B", implicit={"Bet365": RatePair(theta_home=3.0, theta_away=0.5),
                                                "BetAndWin": RatePair(theta_home=3.1, theta_away=0.45)})
    with_odds = Forecaster(posterior, TEAMS, seed=4, use_odds=True).fixture_rates(fixture)
    without = Forecaster(posterior, TEAMS, seed=4, use_odds=False).fixture_rates(fixture)
    np.testing.assert_allclose(without[0], 1.0)
    assert with_odds[0].mean() > 1.5
    assert with_odds[1].mean() < 1.0
    again = Forecaster(posterior, TEAMS, seed=4, use_odds=True).fixture_rates(fixture)
    np.testing.assert_array_equal(with_odds[0], again[0])


def test_bookmaker_rate_draws_follow_the_conjugate_update():
    forecaster = Forecaster(make_posterior(n_states=400, tau=0.2), TEAMS)
    observed = np.array([3.0, 3.1])
    draws = forecaster._bookmaker_rate(observed, 0, np.random.default_rng(8))
    precision = 1.0 / 10.0 + 2 / 0.04
    mean = (1.4 / 10.0 + observed.sum() / 0.04) / precision
    assert draws.shape == (400,)
    assert np.all(draws > 0)
    assert draws.mean() == pytest.approx(mean, abs=0.05)
    assert draws.std() == pytest.approx(1.0 / math.sqrt(precision), rel=0.2)


def test_season_projection():
    att = np.array([0.6, -0.2, -0.1, -0.3])
    posterior = make_posterior(att=att)
    carry = Forecaster(posterior, TEAMS, config=PredictConfig(season_projection="carry"))
    np.testing.assert_allclose(carry.effects_for(2)[0], np.tile(att, (8, 1)))
    evolve = Forecaster(posterior, TEAMS, seed=1)
    projected, _ = evolve.effects_for(3)
    np.testing.assert_allclose(projected.sum(axis=1), 0.0, atol=1e-12)
    assert not np.allclose(projected, att)
    assert evolve.effects_for(3)[0] is projected


def test_module_level_forecast_match():
    forecast = forecast_match(make_posterior(), Fixture(0, 1, "B", "A"), TEAMS, use_odds=False)
    assert forecast.home_team == "B"
    assert forecast.probs.is_simplex()


def test_frames():
    fixtures = [Fixture(0, 1, "A", "B", goals=(2, 1)), Fixture(1, 1, "C", "D")]
    forecasts = Forecaster(make_posterior(), TEAMS, config=PredictConfig(max_goals=5)).forecast_all(fixtures)
    frame = forecasts_frame(forecasts, fixtures)
    assert list(frame["match"]) == [0, 1]
    assert frame.loc[0, "goals_home"] == 2
    np.testing.assert_allclose(frame[["p_win", "p_draw", "p_loss"]].sum(axis=1), 1.0)
    grids = score_grids_frame(forecasts)
    assert len(grids) == 2 * 36
    np.testing.assert_allclose(grids.groupby("match")["probability"].sum(), 1.0)


# Posterior predictive checks

def test_p_value_is_strict():
    replicated = ReplicatedScores(home=np.array([[1, 0], [2, 0], [1, 0]]), away=np.array([[0, 0]] * 3))
    y_home, y_away = np.array([1, 0]), np.array([0, 0])
    # T(y) = 0.5; replications give 0.5, 1.0, 0.5
    assert bayesian_p_value(replicated, "mean_goal_difference", y_home, y_away) == pytest.approx(1 / 3)
    assert bayesian_p_value(replicated, "draw_frequency", y_home, y_away) == 0.0
    with pytest.raises(ValueError):
        bayesian_p_value(replicated, "kurtosis", y_home, y_away)


def test_p_values_are_calibrated_on_model_data():
    rng = np.random.default_rng(0)
    gamma_home = rng.uniform(0.8, 2.2, 120)
    gamma_away = rng.uniform(0.5, 1.6, 120)
    replicated = replicate_from_rates(np.tile(gamma_home, (400, 1)), np.tile(gamma_away, (400, 1)), seed=1)
    p_values = []
    for _ in range(20):
        p_values.append(bayesian_p_value(replicated, "mean_goal_difference",
                                         rng.poisson(gamma_home), rng.poisson(gamma_away)))
    assert 0.2 < np.median(p_values) < 0.8


def test_ppc_table_and_envelope():
    rng = np.random.default_rng(5)
    gamma_home = rng.uniform(0.8, 2.2, 300)
    gamma_away = rng.uniform(0.5, 1.6, 300)
    y_home, y_away = rng.poisson(gamma_home), rng.poisson(gamma_away)
    replicated = replicate_from_rates(np.tile(gamma_home, (500, 1)), np.tile(gamma_away, (500, 1)), seed=2)
    table = posterior_predictive_check(replicated, y_home, y_away)
    assert list(table["statistic"]) == ["mean_goal_difference", "draw_frequency", "total_goals", "max_home_score"]
    assert table["p_value"].between(0.0, 1.0).all()
    envelope = goal_difference_table(replicated, y_home, y_away, level=0.99)
    inside = (envelope["observed"] >= envelope["lower"]) & (envelope["observed"] <= envelope["upper"])
    assert inside.mean() >= 0.9
    assert envelope["observed"].sum() == pytest.approx(1.0)


def test_misspecified_model_is_flagged(caplog):
    replicated = replicate_from_rates(np.full((300, 100), 1.0), np.full((300, 100), 1.0), seed=0)
    y_home = np.full(100, 3)
    y_away = np.zeros(100, dtype=int)
    table = posterior_predictive_check(replicated, y_home, y_away, ["mean_goal_difference"])
    assert table.loc[0, "flagged"]
    assert "predict.ppc_flagged" in caplog.text


def test_replicate_scores_caps_draws():
    posterior = make_posterior(n_states=8)
    replicated = replicate_scores(posterior, max_draws=3, seed=0)
    assert replicated.home.shape == (3, 4)


# Season simulation

def test_double_round_robin_detection():
    assert is_double_round_robin(round_robin())
    assert not is_double_round_robin(round_robin()[:-1])


def test_simulated_ranks():
    posterior = make_posterior(mu=0.2, att=np.array([1.2, -0.4, -0.4, -0.4]))
    forecaster = Forecaster(posterior, TEAMS, use_odds=False)
    result = simulate_season(forecaster, round_robin(), n_simulations=3000, seed=9)
    probs = result.rank_probabilities
    np.testing.assert_allclose(probs.sum(axis=0), 1.0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert probs[0, 0] > 0.8
    assert result.complete
    assert result.points.shape == (3000, 4)
    # every match hands out 2 or 3 points
    total = result.points.sum(axis=1)
    assert ((total >= 24) & (total <= 36)).all()
    table = result.rank_table()
    assert table.loc[0, "team"] == "A"
    assert list(result.points_quantiles().columns[:2]) == ["team", "mean"]


def test_simulation_is_deterministic():
    forecaster = Forecaster(make_posterior(), TEAMS, use_odds=False)
    a = simulate_season(forecaster, round_robin(), n_simulations=2500, seed=3)
    b = simulate_season(forecaster, round_robin(), n_simulations=2500, seed=3)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.rank_counts, b.rank_counts)


def test_incomplete_fixtures_warn(caplog):
    forecaster = Forecaster(make_posterior(), TEAMS, use_odds=False)
    with pytest.warns(IncompleteFixtures):
        result = simulate_season(forecaster, round_robin()[:5], n_simulations=10, seed=0)
    assert not result.complete
    assert "predict.incomplete_fixtures" in caplog.text


def test_identical_teams_share_the_title():
    forecaster = Forecaster(make_posterior(mu=0.0), TEAMS, use_odds=False)
    result = simulate_season(forecaster, round_robin(), n_simulations=8000, seed=1)
    first = result.rank_probabilities[:, 0]
    assert np.all(np.abs(first - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 8000))

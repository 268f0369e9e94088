"""Shared pytest fixtures for the odds model tests."""
from __future__ import annotations

import pathlib
import sys
from datetime import date
from typing import Callable, Dict, Optional

import pytest

PROJECT_ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from odds_bayes.config import RunConfig, SamplerConfig  # noqa: E402
from odds_bayes.data import MatchRecord  # noqa: E402
from odds_bayes.metrics import MetricsManager  # noqa: E402
from odds_bayes.odds import DecimalOddsTriple  # noqa: E402
from odds_bayes.synthetic import SyntheticLeague, generate_league  # noqa: E402


@pytest.fixture(autouse=True)
def _clean_environment(monkeypatch: pytest.MonkeyPatch):
    """No ODDS_* variable leaks into a test; metrics start fresh."""
    import os

    for key in list(os.environ):
        if key.startswith("ODDS_") or key in ("LOG_LEVEL", "LOG_FORMAT"):
            monkeypatch.delenv(key, raising=False)
    MetricsManager.get().reset()
    yield


@pytest.fixture(scope="session")
def small_league() -> SyntheticLeague:
    """Four teams, three seasons of one double round robin each."""
    return generate_league(n_teams=4, n_seasons=3, seed=11)


@pytest.fixture(scope="session")
def small_dataset(small_league: SyntheticLeague):
    return small_league.dataset("shin")


@pytest.fixture
def fast_sampler() -> SamplerConfig:
    return SamplerConfig(n_iterations=60, n_burnin=20, n_chains=2, adapt_window=10, rate_thin=1)


@pytest.fixture
def make_record() -> Callable[..., MatchRecord]:
    """MatchRecord factory with a single Bet365 quote by default."""

    def _factory(home: str = "Arsenal", away: str = "Liverpool", goals: tuple = (1, 0), season: int = 1,
                 odds: Optional[Dict[str, tuple]] = None, line: int = 2,
                 day: date = date(2016, 8, 14)) -> MatchRecord:
        quotes = odds if odds is not None else {"Bet365": (1.57, 4.20, 6.00)}
        return MatchRecord(
            season=season, date=day, home_team=home, away_team=away,
            goals_home=goals[0], goals_away=goals[1],
            odds={name: DecimalOddsTriple(win=w, draw=d, loss=l) for name, (w, d, l) in quotes.items()},
            line=line,
        )

    return _factory


@pytest.fixture
def run_config(tmp_path: pathlib.Path) -> Callable[..., RunConfig]:
    """RunConfig writing into tmp_path, with a short sampler."""

    def _factory(**overrides) -> RunConfig:
        values = {
            "run.output_dir": str(tmp_path / "out"),
            "run.data_dir": str(tmp_path / "data"),
            "run.league": "SYN",
            "sampler.n_iterations": 60,
            "sampler.n_burnin": 20,
            "sampler.n_chains": 2,
            "sampler.adapt_window": 10,
            "metrics.enabled": False,
        }
        values.update(overrides)
        return RunConfig(overrides=values, use_environment=False)

    return _factory

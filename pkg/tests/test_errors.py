import logging

import pytest

from odds_bayes.errors import (
    ConfigError,
    ConvergenceFailure,
    EmptyTrain,
    ErrorType,
    ExitCode,
    MissingDraws,
    NoConvergence,
    NonFiniteStart,
    NonPositiveOdd,
    OddsModelError,
    log_error,
)


@pytest.mark.parametrize("error_cls,code", [
    (ConfigError, ExitCode.USAGE),
    (NonPositiveOdd, ExitCode.DATA),
    (EmptyTrain, ExitCode.DATA),
    (MissingDraws, ExitCode.DATA),
    (ConvergenceFailure, ExitCode.CONVERGENCE),
    (NoConvergence, ExitCode.CONVERGENCE),
    (NonFiniteStart, ExitCode.CONVERGENCE),
])
def test_exit_codes(error_cls, code):
    assert error_cls("boom").exit_code is code


def test_context_carries_metadata_and_default_recovery():
    err = EmptyTrain("No seasons precede season 1", season=1)
    assert err.context.error_type is ErrorType.EMPTY_TRAIN
    assert err.context.metadata == {"season": 1}
    assert "earlier season" in err.context.recovery_suggestion
    assert str(err) == "No seasons precede season 1 (season=1)"
    payload = err.context.to_dict()
    assert payload["error_type"] == "empty_train"
    assert payload["season"] == 1


def test_explicit_recovery_overrides_default():
    err = MissingDraws("gone", recovery_suggestion="Run the predict command first")
    assert err.context.recovery_suggestion == "Run the predict command first"


def test_every_error_is_an_odds_model_error():
    assert issubclass(NonPositiveOdd, OddsModelError)
    assert str(ConfigError("plain")) == "plain"


def test_log_error_emits_type_and_recovery(caplog):
    caplog.set_level(logging.ERROR, logger="odds_bayes.errors")
    log_error(ConfigError("bad flag", flag="--x"))
    assert "error_type=config_error" in caplog.text
    assert "recovery=" in caplog.text

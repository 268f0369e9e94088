"""
Error types for the odds model pipeline.
Every failure carries an ErrorContext with a recovery suggestion and maps to a CLI exit code.
"""
import logging
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, Optional

log = logging.getLogger(__name__)


class ErrorType(Enum):
    """Error types."""
    NON_POSITIVE_ODD = "non_positive_odd"
    DEGENERATE_ODDS = "degenerate_odds"
    INVALID_RATE = "invalid_rate"
    NO_ROOT = "no_root"
    NO_CONVERGENCE = "no_convergence"
    INVALID_SIMPLEX = "invalid_simplex"
    MALFORMED_HEADER = "malformed_header"
    UNPARSEABLE_ROW = "unparseable_row"
    UNKNOWN_SEASON = "unknown_season"
    EMPTY_TRAIN = "empty_train"
    NON_FINITE_START = "non_finite_start"
    UNKNOWN_TEAM = "unknown_team"
    LENGTH_MISMATCH = "length_mismatch"
    MISSING_DRAWS = "missing_draws"
    MISSING_DATA = "missing_data"
    CONFIG_ERROR = "config_error"
    CONVERGENCE_FAILURE = "convergence_failure"
    CHAIN_FAILURE = "chain_failure"


class ExitCode(int, Enum):
    """CLI exit codes."""
    SUCCESS = 0
    USAGE = 1
    DATA = 2
    CONVERGENCE = 3


_EXIT_CODES: Dict[ErrorType, ExitCode] = {
    ErrorType.CONFIG_ERROR: ExitCode.USAGE,
    ErrorType.CONVERGENCE_FAILURE: ExitCode.CONVERGENCE,
    ErrorType.NO_CONVERGENCE: ExitCode.CONVERGENCE,
    ErrorType.NON_FINITE_START: ExitCode.CONVERGENCE,
    ErrorType.CHAIN_FAILURE: ExitCode.CONVERGENCE,
}

_RECOVERY: Dict[ErrorType, str] = {
    ErrorType.NON_POSITIVE_ODD: "Check the odds columns; decimal odds must exceed 1.0",
    ErrorType.DEGENERATE_ODDS: "Inverse odds must be positive",
    ErrorType.INVALID_RATE: "Insider rate z must lie in [0, 1)",
    ErrorType.NO_ROOT: "The overround is too large for Shin's model; use basic normalization",
    ErrorType.NO_CONVERGENCE: "Probabilities may be unreachable by any rate pair under the cap",
    ErrorType.INVALID_SIMPLEX: "Probabilities must be in (0, 1) and sum to 1",
    ErrorType.MALFORMED_HEADER: "The file must carry Date, HomeTeam, AwayTeam, FTHG and FTAG columns",
    ErrorType.UNPARSEABLE_ROW: "Fix or remove the offending row",
    ErrorType.UNKNOWN_SEASON: "Pick a season present in the dataset",
    ErrorType.EMPTY_TRAIN: "The test season needs at least one earlier season to train on",
    ErrorType.NON_FINITE_START: "Check the data and prior configuration",
    ErrorType.UNKNOWN_TEAM: "The team must appear in the fitted dataset",
    ErrorType.LENGTH_MISMATCH: "Provide one forecast per observed match",
    ErrorType.MISSING_DRAWS: "Run the fit command first",
    ErrorType.MISSING_DATA: "Check the data directory and file names",
    ErrorType.CONFIG_ERROR: "Check the run configuration file and flags",
    ErrorType.CONVERGENCE_FAILURE: "Run longer chains or inspect diagnostics.csv",
    ErrorType.CHAIN_FAILURE: "Rerun with sampler.workers set to 1 to see the full traceback",
}


@dataclass
class ErrorContext:
    """Error context with recovery suggestions."""
    error_type: ErrorType
    message: str
    recovery_suggestion: str
    timestamp: datetime = field(default_factory=datetime.now)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_type": self.error_type.value,
            "message": self.message,
            "recovery_suggestion": self.recovery_suggestion,
            "timestamp": self.timestamp.isoformat(),
            **self.metadata,
        }


class OddsModelError(Exception):
    """Base error; subclasses fix the error type."""
    error_type: ErrorType = ErrorType.MISSING_DATA

    def __init__(self, message: str, recovery_suggestion: Optional[str] = None, **metadata: Any):
        super().__init__(message)
        self.context = ErrorContext(
            error_type=self.error_type,
            message=message,
            recovery_suggestion=recovery_suggestion or _RECOVERY[self.error_type],
            metadata=metadata,
        )

    @property
    def exit_code(self) -> ExitCode:
        return _EXIT_CODES.get(self.error_type, ExitCode.DATA)

    def __str__(self) -> str:
        details = " ".join(f"{k}={v}" for k, v in self.context.metadata.items())
        base = self.context.message
        return f"{base} ({details})" if details else base


class NonPositiveOdd(OddsModelError):
    error_type = ErrorType.NON_POSITIVE_ODD


class DegenerateOdds(OddsModelError):
    error_type = ErrorType.DEGENERATE_ODDS


class InvalidRate(OddsModelError):
    error_type = ErrorType.INVALID_RATE


class NoRoot(OddsModelError):
    error_type = ErrorType.NO_ROOT


class NoConvergence(OddsModelError):
    error_type = ErrorType.NO_CONVERGENCE


class InvalidSimplex(OddsModelError):
    error_type = ErrorType.INVALID_SIMPLEX


class MalformedHeader(OddsModelError):
    error_type = ErrorType.MALFORMED_HEADER


class UnparseableRow(OddsModelError):
    error_type = ErrorType.UNPARSEABLE_ROW


class UnknownSeason(OddsModelError):
    error_type = ErrorType.UNKNOWN_SEASON


class EmptyTrain(OddsModelError):
    error_type = ErrorType.EMPTY_TRAIN


class NonFiniteStart(OddsModelError):
    error_type = ErrorType.NON_FINITE_START


class UnknownTeam(OddsModelError):
    error_type = ErrorType.UNKNOWN_TEAM


class LengthMismatch(OddsModelError):
    error_type = ErrorType.LENGTH_MISMATCH


class MissingDraws(OddsModelError):
    error_type = ErrorType.MISSING_DRAWS


class MissingData(OddsModelError):
    error_type = ErrorType.MISSING_DATA


class ConfigError(OddsModelError):
    error_type = ErrorType.CONFIG_ERROR


class ConvergenceFailure(OddsModelError):
    error_type = ErrorType.CONVERGENCE_FAILURE


class ChainFailure(OddsModelError):
    error_type = ErrorType.CHAIN_FAILURE


def log_error(error: OddsModelError) -> None:
    """Log an error with its context."""
    ctx = error.context
    log.error(
        "odds_bayes.error error_type=%s message=%s recovery=%s",
        ctx.error_type.value,
        str(error),
        ctx.recovery_suggestion,
        extra={"error_context": ctx},
    )


class IncompleteFixtures(UserWarning):
    """Fixture list is not a full double round robin; season tables are partial."""

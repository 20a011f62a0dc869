"""Exception hierarchy.

Every error carries a stable string ``code`` (e.g. ``"MALFORMED_ROW"``) so
that the HTTP layer and the CLI can report structured failures.
"""

from __future__ import annotations


class UnderwritingError(Exception):
    """Base class for all package errors."""

    exit_code = 9

    def __init__(self, code: str, message: str = "", **details):
        self.code = code
        self.message = message
        self.details = details
        super().__init__(f"{code}: {message}" if message else code)

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": str(self)}
        if self.details:
            out["details"] = {k: v for k, v in self.details.items()}
        return out


class ConfigError(UnderwritingError):
    exit_code = 2


class StatementError(UnderwritingError):
    exit_code = 3


class FeatureError(UnderwritingError):
    exit_code = 4


class BinningError(UnderwritingError):
    exit_code = 5


class ModelError(UnderwritingError):
    exit_code = 6


class ExperimentError(UnderwritingError):
    exit_code = 7


class ServiceError(UnderwritingError):
    exit_code = 8


class ConvergenceWarning(UserWarning):
    """Raised (as a warning) when the scorecard optimizer hits ``max_iter``."""

    code = "NO_CONVERGENCE"

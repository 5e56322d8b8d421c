"""Shared exception types. Exit-code mapping lives in the CLI."""


class CredweakError(Exception):
    """Base class for all package errors."""


class ValidationError(CredweakError):
    """Bad user input: malformed files, invalid config, violated preconditions."""


class TransportError(CredweakError):
    """Backend communication failed after exhausting the retry budget.

    ``attempts`` holds one human-readable line per attempt so callers can see
    whether failures were timeouts or HTTP-status errors.
    """

    def __init__(self, message: str, attempts: list[str] | None = None):
        super().__init__(message)
        self.attempts = list(attempts or [])


class ExtractionAborted(CredweakError):
    """A matrix cell could not be completed; carries the completed-cell manifest."""

    def __init__(self, message: str, completed: list[tuple[str, str]], cause: Exception | None = None):
        super().__init__(message)
        self.completed = completed
        self.cause = cause


class FitDivergence(CredweakError):
    """Label-model training hit a non-finite objective or parameter vector."""

    def __init__(self, message: str, last_finite=None):
        super().__init__(message)
        self.last_finite = last_finite

"""Error types shared across the package.

Argument errors are plain ``ValueError``; the classes here cover failures
that callers may want to catch separately (corrupt files, failed solves,
failed robust estimation, bad configuration).
"""


class FormatError(ValueError):
    """A binary or text file does not match its declared format.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = ""
        if path is not None:
            where += f" in {path}"
        if offset is not None:
            where += f" at byte offset {offset}"
        super().__init__(message + where)


class NumericalFailure(RuntimeError):
    """A linear solve failed even after jitter escalation and fallback."""

    def __init__(self, message, jitter=None):
        self.jitter = jitter
        if jitter is not None:
            message = f"{message} (final jitter {jitter:g})"
        super().__init__(message)


class EstimationFailure(RuntimeError):
    """Robust model estimation could not produce a valid hypothesis."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent inputs (CLI exit code 2)."""

"""Exception taxonomy shared across the package.

Every module raises one of these rather than bare ValueError/RuntimeError so
the CLI can map failures onto exit codes (usage errors -> 1, runtime and
numeric errors -> 2).
"""


class MsprError(Exception):
    """Base class for all package errors."""


class DimensionError(MsprError):
    """Shape mismatch between tensors or network layers."""


class ContractError(MsprError):
    """A documented precondition was violated by the caller."""


class ParameterError(MsprError):
    """An out-of-range or malformed parameter value."""


class FormatError(MsprError):
    """A malformed file; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(MsprError):
    """NaN/Inf or other numeric breakdown during computation."""


class DatasetError(MsprError):
    """A dataset cannot satisfy a sampling request."""

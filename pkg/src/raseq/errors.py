"""Exception types shared across the package."""


class RaseqError(Exception):
    """Base class for all package errors."""


class DimensionError(RaseqError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(RaseqError, ArithmeticError):
    """A non-finite value showed up where finite values are required."""


class ContractError(RaseqError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(RaseqError, ValueError):
    """An input file does not follow the expected layout."""


class CheckpointError(RaseqError):
    """A checkpoint cannot be read (bad magic, version or manifest)."""


class TrainingError(RaseqError):
    """Training diverged or could not proceed."""

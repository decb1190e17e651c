"""Exception types shared across the package.

The CLI maps these onto stable exit codes: parameter/usage problems are
exit 1, I/O and file-format problems exit 2, numeric failures exit 3.
"""


class CycleContrastError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CycleContrastError):
    """Array shapes are incompatible for the requested operation."""


class DegenerateInputError(CycleContrastError):
    """An input is numerically degenerate (e.g. a zero-norm row)."""


class ParameterError(CycleContrastError):
    """An argument value is outside its valid range."""


class ContractError(CycleContrastError):
    """A documented input contract was violated (e.g. non-unit rows)."""


class ConfigError(CycleContrastError):
    """Structurally mismatched configurations or parameter sets."""


class CapacityError(CycleContrastError):
    """A buffer was asked to hold more items than it can."""


class FormatError(CycleContrastError):
    """A binary file does not match its documented layout."""


class NumericError(CycleContrastError):
    """A non-finite value appeared where finite math was required."""


class NonFiniteLossError(NumericError):
    """Training produced a non-finite loss; carries enough context to replay."""

    def __init__(self, message: str, step: int, batch_seed: int):
        super().__init__(message)
        self.step = step
        self.batch_seed = batch_seed

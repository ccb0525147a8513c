"""Exception hierarchy shared by every module.

Exit-code mapping in the CLI: ContractError (and subclasses) -> 1,
NumericError -> 2, FormatError / LoadError / OSError -> 3.
"""


class ContractError(ValueError):
    """A documented precondition or invariant was violated by the caller."""


class DimensionError(ContractError):
    """Shapes passed to an operation do not agree."""


class ConfigError(ContractError):
    """A configuration value is missing, malformed, or out of range."""


class ZeroShotViolation(ContractError):
    """Train and test concept sets overlap."""


class NumericError(ArithmeticError):
    """A computation produced or would consume non-finite or invalid values."""


class NumericDomainError(NumericError):
    """Input lies outside the mathematical domain of an operation."""


class FormatError(RuntimeError):
    """A binary container or manifest is malformed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class LoadError(RuntimeError):
    """A referenced file or resource could not be loaded."""

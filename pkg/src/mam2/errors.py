"""Exception hierarchy shared by every module in the package."""


class MAM2Error(Exception):
    """Base class for all package errors."""


class DimensionError(MAM2Error, ValueError):
    """Operand shapes are incompatible."""


class UsageError(MAM2Error, ValueError):
    """An argument violates an operation's precondition."""


class StructureError(MAM2Error, ValueError):
    """A mask does not have the structure an operation requires."""


class FormatError(MAM2Error, ValueError):
    """A tensor file or target file is malformed."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class RangeError(MAM2Error, IndexError):
    """Not enough source frames for the requested sampling."""


class NumericError(MAM2Error, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""

"""Exception hierarchy shared by every module of the package."""


class GroupEncError(Exception):
    """Base class for all package errors."""


class ShapeError(GroupEncError, ValueError):
    """Array dimensions are inconsistent with the operation."""


class ConfigError(GroupEncError, ValueError):
    """A configuration value is outside its valid range."""


class FormatError(GroupEncError, ValueError):
    """A file could not be parsed, or its contents are incompatible."""


class NumericError(GroupEncError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class StateError(GroupEncError, RuntimeError):
    """An object was used in a state that does not allow the operation."""


class ContractError(GroupEncError, ValueError):
    """Inputs violate a documented precondition."""


class DomainError(GroupEncError, ValueError):
    """Input values lie outside the mathematical domain of the function."""

"""Exception hierarchy shared by every module."""


class ShrinkChoiceError(Exception):
    """Base class for errors raised by this package."""


class DomainError(ShrinkChoiceError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigurationError(ShrinkChoiceError, ValueError):
    """Inputs are individually valid but do not form a usable configuration."""


class DataError(ShrinkChoiceError, ValueError):
    """Micro-data cannot be turned into subgroup estimates."""


class DegenerateRuleError(ShrinkChoiceError, ArithmeticError):
    """A decision statistic has zero variance and zero mean."""

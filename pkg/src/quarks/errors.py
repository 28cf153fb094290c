"""Exception types shared across the package.

The CLI maps these onto exit codes, so every numerical failure raised by the
library derives from :class:`NumericalError` and every invalid argument from
:class:`ConfigError` (itself a ``ValueError``).
"""


class ConfigError(ValueError):
    """Invalid parameters or inconsistent shapes supplied by the caller."""


class NumericalError(ArithmeticError):
    """A computation could not be carried out reliably."""


class RankDeficientError(NumericalError):
    """A regressor or normal matrix lacks the column rank a solve requires."""

    def __init__(self, message, rank=None, block=None):
        super().__init__(message)
        self.rank = rank
        self.block = block


class SingularFactorError(NumericalError):
    """A Kronecker factor that must be inverted is (numerically) singular."""

    def __init__(self, message, factor=None):
        super().__init__(message)
        self.factor = factor

"""Exception hierarchy shared by every module."""


class RlaError(Exception):
    """Base class for all library errors."""


class DimensionError(RlaError, ValueError):
    """Operand shapes do not conform."""


class DomainError(RlaError, ValueError):
    """An operation was evaluated outside its mathematical domain."""


class NonFiniteError(RlaError, FloatingPointError):
    """A forward operation produced NaN or Inf while checks are enabled."""


class ContractError(RlaError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(RlaError, ValueError):
    """Configuration values are inconsistent or unusable."""


class DivergenceError(RlaError, ArithmeticError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the path of the last finite state, if one was written.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint

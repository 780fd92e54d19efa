"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class InvalidArgumentError(ValueError):
    """An argument is malformed or out of its permitted range."""


class NumericalFailure(ArithmeticError):
    """A likelihood evaluation produced a non-finite value.

    The offending parameter values (and study index, when known) are kept
    on the instance so callers can report them.
    """

    def __init__(self, message, params=None, study=None, side=None):
        super().__init__(message)
        self.params = params
        self.study = study
        self.side = side


class InvalidStateError(RuntimeError):
    """An operation was requested on an object in an unusable state."""

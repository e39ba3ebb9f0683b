"""Exception hierarchy.  The CLI maps validation errors to exit 1, numerical ones to exit 2."""


class GraftError(Exception):
    pass


class ValidationError(GraftError, ValueError):
    """Bad input: malformed file, dimension mismatch, contradictory config."""


class VersionError(ValidationError):
    pass


class NumericalError(GraftError, ArithmeticError):
    """Non-finite value in a forward pass, loss or gradient."""


class TapeError(GraftError, RuntimeError):
    pass

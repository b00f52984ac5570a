"""Exception hierarchy shared across the package."""


class HamcorrError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(HamcorrError, ValueError):
    pass


class InvalidParameterError(HamcorrError, ValueError):
    pass


class InvalidInputError(HamcorrError, ValueError):
    pass


class NumericalError(HamcorrError, ArithmeticError):
    """Base for failures of the numerical integration."""


class StiffnessError(NumericalError):
    """Step size underflowed; carries the time where it happened."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NumericalBlowupError(NumericalError):
    def __init__(self, message, t=None, columns=()):
        super().__init__(message)
        self.t = t
        self.columns = tuple(columns)


class AdjointDivergenceError(NumericalError):
    def __init__(self, message, forward_stats=None):
        super().__init__(message)
        self.forward_stats = forward_stats or {}


class DivergenceError(NumericalError):
    pass


class DataError(HamcorrError):
    """Malformed or inconsistent input data."""


class DatasetParseError(DataError, ValueError):
    pass


class NotFoundError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class GenerationError(DataError):
    pass

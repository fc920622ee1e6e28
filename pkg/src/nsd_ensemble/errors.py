"""Exception types raised across the package."""


class NSDError(Exception):
    """Base class for all package errors."""


class UnsupportedOrderError(NSDError, ValueError):
    pass


class InvalidBetaError(NSDError, ValueError):
    pass


class HistoryLengthError(NSDError, ValueError):
    pass


class ResolutionMismatchError(NSDError, ValueError):
    pass


class UnstablePairError(NSDError, ValueError):
    pass


class NonSPDConductivityError(NSDError, ValueError):
    pass


class DegenerateTangentialConductivityError(NSDError, ValueError):
    pass


class SpaceMismatchError(NSDError, ValueError):
    pass


class SingularMatrixError(NSDError, RuntimeError):
    pass


class NonpositiveDenominatorError(NSDError, ArithmeticError):
    """The closed-form auxiliary-variable update lost positivity.

    Carries the offending denominator so callers can report the
    stability-parameter diagnostic alongside it.
    """

    def __init__(self, denominator, message=None):
        self.denominator = denominator
        if message is None:
            if denominator != denominator:
                message = ("update denominator is nan: the intermediate fields overflowed "
                           "(see the stiff-amplification warning of the parameter check)")
            else:
                message = (f"update denominator {denominator:.6g} <= 0; "
                           "check gamma/alpha_sav against check_rho_max")
        super().__init__(message)


class MissingAnalyticSolutionError(NSDError, ValueError):
    pass


class ConfigError(NSDError, ValueError):
    """Configuration could not be parsed or validated.

    ``field`` holds the dotted path of the offending key when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)

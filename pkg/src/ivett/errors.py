"""Exception hierarchy."""


class IvettError(Exception):
    """Base class for all package errors."""


class ValidationError(IvettError, ValueError):
    pass


class DegenerateArm(ValidationError):
    pass


class NonBinaryFlag(ValidationError):
    pass


class BinaryOutcomeViolation(ValidationError):
    pass


class RaggedCovariates(ValidationError):
    pass


class UnknownTermIndex(ValidationError):
    pass


class InvalidTerm(ValidationError):
    pass


class PreconditionError(IvettError, ValueError):
    pass


class SingularMatrix(IvettError, ArithmeticError):
    pass


class SingularJacobian(SingularMatrix):
    pass


class NonFiniteEvaluation(IvettError, ArithmeticError):
    pass


class NoDescent(IvettError, ArithmeticError):
    pass


class MaxIterations(IvettError, ArithmeticError):
    pass


class NonConvergence(IvettError, ArithmeticError):
    pass


class RatioDenominatorNonpositive(IvettError, ArithmeticError):
    pass


class UnsupportedOutcomeKind(IvettError, ValueError):
    pass


class InvalidWitness(IvettError, ValueError):
    pass


class MismatchedRuns(IvettError, ValueError):
    pass


class ParseError(IvettError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(IvettError, ValueError):
    pass

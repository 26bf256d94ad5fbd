"""
Named failure conditions.

Input problems derive from ``InputError`` (a ``ValueError``) and map to exit
code 2; numerical or convergence failures derive from ``NumericalError`` (a
``RuntimeError``) and map to exit code 3.
"""


class InputError(ValueError):
    """Bad input data, arguments or configuration."""

    exit_code = 2


class NumericalError(RuntimeError):
    """A computation could not produce a valid result."""

    exit_code = 3


# --- input errors -----------------------------------------------------------

class EmptyUnion(InputError):
    pass


class BadCounts(InputError):
    pass


class IndexOutOfRange(InputError, IndexError):
    pass


class ParseError(InputError):
    pass


class InconsistentColumns(InputError):
    pass


class NoObservations(InputError):
    pass


class DuplicatePair(InputError):
    pass


class NotObserved(InputError):
    pass


class DomainError(InputError):
    pass


class NotSymmetric(InputError):
    pass


class NonpositiveDiagonal(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class TooFewPoints(InputError):
    pass


class NonPSDPhi(InputError):
    pass


class MissingMomentEntry(InputError):
    pass


class NoAuxCoverage(InputError):
    pass


class FoldTooSmall(InputError):
    pass


class GridEmpty(InputError):
    pass


class BadGamma(InputError):
    pass


class UnachievableEta(InputError):
    pass


class ConfigOutOfRange(InputError):
    pass


class PairLimitExceeded(InputError):
    pass


# --- numerical errors -------------------------------------------------------

class DegeneratePair(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularSigma(NumericalError):
    pass


class AllFoldsDegenerate(NumericalError):
    pass


class NonPDBlock(NumericalError):
    pass


class NoPDCompletion(NumericalError):
    pass


class ReplicateFailure(NumericalError):
    pass


class AsymmetricResult(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


def error_name(exc: BaseException) -> str:
    """Return the short class name used in machine-parsable messages."""
    return type(exc).__name__

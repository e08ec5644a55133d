"""Exception hierarchy shared across the package."""


class TreeOTError(Exception):
    """Base class for all errors raised by this package."""


# -- input / structural errors -------------------------------------------------

class InvalidInput(TreeOTError, ValueError):
    """Malformed problem data (shapes, labels, signs)."""


class TreeError(InvalidInput):
    pass


class CycleDetected(TreeError):
    pass


class Disconnected(TreeError):
    pass


class DuplicateEdge(TreeError):
    pass


class UnknownNode(TreeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class RootNotLeaf(TreeError):
    pass


class ShapeMismatch(InvalidInput):
    pass


class MassMismatch(InvalidInput):
    pass


class EpsilonNonPositive(InvalidInput):
    pass


class MissingEdgeCost(InvalidInput):
    pass


class ModeOutOfRange(InvalidInput):
    pass


class EqualModes(InvalidInput):
    pass


class NoConstraints(InvalidInput):
    pass


class IncompatibleRowSums(InvalidInput):
    pass


class InconsistentCounts(InvalidInput):
    pass


class ProblemMismatch(InvalidInput):
    pass


# -- numerical errors ----------------------------------------------------------

class NumericalError(TreeOTError, ArithmeticError):
    pass


class NumericalUnderflow(NumericalError):
    """A message or scaling left the representable range in the linear domain."""


class NonPositiveEntry(NumericalError):
    pass


class InfeasibleProblem(NumericalError):
    """Positive target mass where the model assigns zero probability."""


class TooLarge(NumericalError):
    pass


class SupportViolation(NumericalError):
    """A plan puts mass where its reference measure is zero."""


class StaleDependency(TreeOTError, RuntimeError):
    """A cached message was read while one of its inputs was out of date."""


# -- convergence ---------------------------------------------------------------

class ConvergenceError(TreeOTError):
    """Iteration stopped before reaching the tolerance.

    The partially converged result is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class MaxSweepsExceeded(ConvergenceError):
    pass


class NotConverged(UserWarning):
    """Warning category for extracting quantities from an unconverged solve."""

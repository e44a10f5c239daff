"""Exception hierarchy shared by every module of the package."""


class CoinfectionError(Exception):
    """Base class for all package errors."""


class ParameterError(CoinfectionError, ValueError):
    """A parameter set fails its field-level constraints or cannot be parsed."""


class AssumptionViolation(CoinfectionError):
    """A structural model assumption (ordering of thresholds, non-degeneracy) fails."""

    def __init__(self, name, detail=""):
        self.name = name
        super().__init__(f"assumption '{name}' violated{': ' + detail if detail else ''}")


class AssumptionIIFailure(AssumptionViolation):
    """dP/dS is not positive at a bifurcation point where it is required to be."""

    def __init__(self, K, detail=""):
        self.K = K
        super().__init__("assumption-II", f"K={K!r} {detail}".strip())


class NumericalError(CoinfectionError):
    """Base class for failures of a numerical procedure."""


class NonFinite(NumericalError):
    pass


class SingularLinearSystem(NumericalError):
    pass


class DivisionDegenerate(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class ContinuationStall(NumericalError):
    def __init__(self, last_good_K, detail=""):
        self.last_good_K = last_good_K
        super().__init__(f"continuation stalled after K={last_good_K!r} {detail}".strip())


class NoCrossing(NumericalError):
    def __init__(self, msg, marginal=False):
        self.marginal = marginal
        super().__init__(msg)


class StepUnderflow(NumericalError):
    pass


class InvariantViolation(CoinfectionError):
    """An internal cross-check between two independent routes disagreed."""

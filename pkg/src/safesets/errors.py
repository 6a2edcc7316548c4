"""Exception types shared across the library."""


class SafesetsError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(SafesetsError):
    """Matrix/vector dimensions are inconsistent."""


class NonPsdCost(SafesetsError):
    """QP cost matrix has a significantly negative eigenvalue."""


class InfeasibleError(SafesetsError):
    """A constraint system has an empty feasible set.

    For QPs the optional ``dual_ray`` attribute carries a Farkas-type
    certificate: y >= 0 with y^T A ~ 0 and y^T b < 0.
    """

    def __init__(self, msg="infeasible", dual_ray=None, context=None):
        super().__init__(msg)
        self.dual_ray = dual_ray
        self.context = context or {}


class UnboundedError(SafesetsError):
    """A polytope (or LP) is unbounded."""


class MaxIterationsError(SafesetsError):
    """Iteration limit reached without convergence."""


class NonFiniteState(SafesetsError):
    """An ODE state or intermediate stage became non-finite."""


class NonFiniteValue(SafesetsError):
    """A function evaluation returned a non-finite value."""


class MissingDerivative(SafesetsError):
    """A derivative callback required for the requested order is absent."""


class InvalidParams(SafesetsError):
    """Parameter values violate a documented precondition."""


class RangeError(SafesetsError):
    """A value left the domain/range of an invertible map."""


class NotNegative(SafesetsError):
    """A function required to be strictly negative failed the check."""


class DegenerateRow(SafesetsError):
    """A constraint row lost its input dependence while binding."""


class DegenerateRoot(SafesetsError):
    """Root derivative too small for the analytic sensitivity formula."""


class SensitivityUnavailable(SafesetsError):
    """Path sensitivity for the requested point cannot be computed."""


class GradientUnavailable(SafesetsError):
    """No gradient mode is available for the requested function."""


class EmptyRegion(SafesetsError):
    """A verification region contains no grid points."""


class ContractionEmpty(SafesetsError):
    """The gamma-contracted input polytope is empty or too thin."""


class TieCase(SafesetsError):
    """An input combination the source result leaves undefined."""


class SchemaError(SafesetsError):
    """A scenario configuration failed validation."""

    def __init__(self, msg, key_path=None):
        super().__init__(msg)
        self.key_path = key_path


class MixedScenario(SafesetsError):
    """Comparison requested across runs of different scenarios."""

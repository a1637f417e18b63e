"""Exception types raised by the sampling toolkit."""


class SISError(Exception):
    """Base class for all errors raised by this package."""


class NonConvergence(SISError):
    """Grid refinement ran out of rounds before meeting its tolerance."""


class QuadratureFailure(SISError):
    """Gram entries moved by more than the tolerance when the rule was refined."""


class DegenerateGram(SISError):
    """The truncated Gram matrix is numerically singular."""


class NotSeparated(SISError):
    """Two sampling points coincide."""


class DimensionMismatch(SISError):
    pass


class DegenerateOperator(SISError):
    """Smallest singular value is negligible relative to the largest."""


class BudgetExceeded(SISError):
    """A perturbation size lies outside the admissible budget."""


class InadmissibleNu(SISError):
    pass


class InadmissibleEpsilon(SISError):
    pass


class SingularNormalEquations(SISError):
    pass


class IterationCapExceeded(SISError):
    pass


class SchemaError(SISError):
    """Scenario file failed validation; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")

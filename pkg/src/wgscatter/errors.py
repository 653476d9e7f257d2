"""Exception hierarchy.

Every failure raised by the package derives from :class:`WaveguideError`, so
callers that only care about "the computation failed" can catch one type.
"""


class WaveguideError(Exception):
    """Base class for all package errors."""


# geometry
class InvalidGeometry(WaveguideError):
    pass


class RefinementTooCoarse(WaveguideError):
    pass


class ParseError(WaveguideError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantViolation(WaveguideError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


# fem
class DegenerateTriangle(WaveguideError):
    pass


class SolverBreakdown(WaveguideError):
    pass


class NotConverged(WaveguideError):
    pass


class SingularSystem(WaveguideError):
    def __init__(self, message, distance=None):
        self.distance = distance
        super().__init__(message)


# modes / ndmap
class BranchPointSingularity(WaveguideError):
    pass


class EigenvalueCollision(WaveguideError):
    pass


# scattering
class AmbiguousKernel(WaveguideError):
    def __init__(self, message, gap=None):
        self.gap = gap
        super().__init__(message)


class SingularTau(WaveguideError):
    pass


class SingularExtraction(WaveguideError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class DerivativeIllConditioned(WaveguideError):
    def __init__(self, message, condition=None):
        self.condition = condition
        super().__init__(message)


# resonance
class QuadratureNotConverged(WaveguideError):
    pass


class NodeSingular(WaveguideError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class DriftedOutOfBox(WaveguideError):
    pass


# time delay
class ExtrapolationUnstable(WaveguideError):
    pass


class CacheError(WaveguideError):
    pass

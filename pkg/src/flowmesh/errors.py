"""Exception hierarchy.

Every error raised on purpose by flowmesh derives from :class:`FlowmeshError`.
Errors that signal a numerical failure (divergence, inverted cells) derive
from :class:`NumericalError`; the CLI maps those to exit code 3 and every
other :class:`FlowmeshError` to exit code 2.
"""


class FlowmeshError(ValueError):
    """Base class for all flowmesh errors."""


class NumericalError(FlowmeshError):
    """A computation failed numerically rather than on bad input."""


# mesh_core
class IndexOutOfRange(FlowmeshError):
    pass


class DegenerateCell(FlowmeshError):
    pass


class NonManifoldSurface(FlowmeshError):
    pass


class BadCapLabeling(FlowmeshError):
    pass


# losses
class EmptyPointSet(FlowmeshError):
    pass


class NoEdges(FlowmeshError):
    pass


class MissingCaps(FlowmeshError):
    pass


class DegenerateFace(FlowmeshError):
    pass


class FieldLengthMismatch(FlowmeshError):
    pass


class WrongBranchCount(FlowmeshError):
    pass


# template_fit
class NonFiniteLoss(NumericalError):
    pass


class CorrespondenceMismatch(FlowmeshError):
    pass


# network
class ShapeMismatch(FlowmeshError):
    pass


class BadInputSize(FlowmeshError):
    pass


class MissingWeights(FlowmeshError):
    pass


# fields
class ZeroSigma(FlowmeshError):
    pass


class WrongSpace(FlowmeshError):
    pass


class EmptySource(FlowmeshError):
    pass


# metrics
class GridMismatch(FlowmeshError):
    pass


class EmptySurface(FlowmeshError):
    pass


class ZeroRange(FlowmeshError):
    pass


class LengthMismatch(FlowmeshError):
    pass


class TooFewSamples(FlowmeshError):
    pass


class DegeneratePolyline(FlowmeshError):
    pass


class KTooLarge(FlowmeshError):
    pass


class EmptyCurve(FlowmeshError):
    pass


# synth
class SpecInfeasible(NumericalError):
    pass


class SelfIntersection(NumericalError):
    pass

"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all domain errors raised by this package."""


class GimbalLock(ToolkitError):
    """Pitch too close to +-pi/2 for yaw/roll to be separable."""


class MissingVariable(ToolkitError):
    """A factor endpoint has no value in the current estimate."""


class Disconnected(ToolkitError):
    """Pose graph is not connected through its binary factors."""


class SingularHessian(ToolkitError):
    """Normal-equation matrix could not be factorized."""


class EmptyEdgeSet(ToolkitError):
    """Orientation cost requested on a graph with no binary factors."""


class AllZeroTranslations(ToolkitError):
    """Mean edge translation is zero; log weights are undefined."""


class NonPlanarGraph(ToolkitError):
    """Operation requires a planar (SE2) graph."""


class EpisodeOver(ToolkitError):
    """Environment stepped past its episode budget."""


class InvalidEdge(ToolkitError):
    """Action references an edge index outside the graph."""


class DimensionMismatch(ToolkitError):
    """Image planes / range map shapes do not agree."""


class DegenerateLayout(ToolkitError):
    """Simulator configuration cannot produce a valid graph."""


class MalformedRecord(ToolkitError):
    """A text record failed to parse; carries the 1-based line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MixedDimension(ToolkitError):
    """Document mixes SE2 and SE3 records."""


class MalformedHeader(ToolkitError):
    """Image file header is not valid PFM/PPM."""


class TruncatedPayload(ToolkitError):
    """Image file ends before the declared payload is complete."""


class DegenerateInput(ToolkitError):
    """Point cloud too small or mismatched for alignment."""


class LengthMismatch(ToolkitError):
    """Trajectories being compared have incompatible lengths."""


class ZeroPathLength(ToolkitError):
    """Ground-truth path length is zero; drift percentage undefined."""

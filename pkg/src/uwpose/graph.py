"""Factor-graph data model for planar and spatial pose estimation.

A graph holds pose variables (SE(2) or SE(3), never mixed) plus optional
scale variables, and five factor kinds:

- Odometry / LoopClosure: relative-pose constraints between two poses.
- DepthPrior: unary constraint on the z translation (y for planar graphs,
  so the same code path is exercisable in 2D tests).
- VisualScaled: relative-pose constraint whose measured translation is
  multiplied by a co-optimized scale variable, parameterized as log(s) so
  s stays positive.
- AnchorPrior: unary full-pose prior, used for gauge fixing.

Graphs are immutable once built; construct them through GraphBuilder.
Residual/Jacobian/chi2 evaluation is pure and uses the right-perturbation
convention throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .errors import InvalidEdge, MissingVariable

# Reference conditions for confidence-weighted information scaling: a factor
# with inlier_count = _N_REF and coverage = _COVERAGE_REF keeps its base
# information; the boost from high inlier counts is clamped at _GAIN_MAX.
_N_REF = 100
_COVERAGE_REF = 0.25
_GAIN_MAX = 4.0


class FactorKind(enum.Enum):
    ODOMETRY = "odometry"
    LOOP_CLOSURE = "loop_closure"
    DEPTH_PRIOR = "depth_prior"
    VISUAL_SCALED = "visual_scaled"
    ANCHOR_PRIOR = "anchor_prior"


BINARY_KINDS = (FactorKind.ODOMETRY, FactorKind.LOOP_CLOSURE, FactorKind.VISUAL_SCALED)


@dataclass(frozen=True)
class VariableId:
    """Typed handle: dense per-kind index plus a kind tag."""

    index: int
    kind: str  # "pose2" | "pose3" | "scale"

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"negative variable index {self.index}")
        if self.kind not in ("pose2", "pose3", "scale"):
            raise ValueError(f"unknown variable kind {self.kind!r}")


@dataclass(frozen=True)
class MatchStats:
    """Feature-match summary attached to visually derived factors."""

    inlier_count: int
    coverage: float

    def __post_init__(self):
        if self.inlier_count < 1:
            raise ValueError("inlier_count must be >= 1")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")


@dataclass(frozen=True)
class Factor:
    kind: FactorKind
    endpoints: tuple[VariableId, ...]
    measurement: object  # Pose2 | Pose3 for pose factors, float for DepthPrior
    info: np.ndarray
    scale_id: VariableId | None = None
    meta: MatchStats | None = None


def _check_info(info, dim: int) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    if info.shape != (dim, dim):
        raise ValueError(f"information matrix must be {dim}x{dim}, got {info.shape}")
    if np.abs(info - info.T).max() > 1e-12:
        raise ValueError("information matrix not symmetric")
    try:
        np.linalg.cholesky(info + 1e-12 * np.eye(dim))
    except np.linalg.LinAlgError:
        raise ValueError("information matrix not positive semi-definite") from None
    return info.copy()


@dataclass
class GraphValues:
    """Mutable estimate container: poses by index, scales stored as log(s)."""

    poses: dict[int, object] = field(default_factory=dict)
    log_scales: dict[int, float] = field(default_factory=dict)

    def copy(self) -> "GraphValues":
        return GraphValues(dict(self.poses), dict(self.log_scales))

    def scale(self, index: int) -> float:
        return math.exp(self.log_scales[index])

    def pose(self, vid: VariableId):
        try:
            return self.poses[vid.index]
        except KeyError:
            raise MissingVariable(f"no value for pose variable {vid.index}") from None


@dataclass(frozen=True)
class PoseGraph:
    """Immutable factor graph; dimension is 'planar' or 'spatial'."""

    dimension: str
    variables: tuple  # ordered (VariableId, initial value) pairs
    factors: tuple[Factor, ...]

    @property
    def pose_dim(self) -> int:
        return 3 if self.dimension == "planar" else 6

    @property
    def pose_count(self) -> int:
        return sum(1 for vid, _ in self.variables if vid.kind != "scale")

    @property
    def scale_count(self) -> int:
        return sum(1 for vid, _ in self.variables if vid.kind == "scale")

    def initial_values(self) -> GraphValues:
        vals = GraphValues()
        for vid, init in self.variables:
            if vid.kind == "scale":
                vals.log_scales[vid.index] = float(init)
            else:
                vals.poses[vid.index] = init
        return vals

    def binary_factors(self):
        return [f for f in self.factors if f.kind in BINARY_KINDS]


class GraphBuilder:
    """Accumulates variables and factors, validates, then freezes a PoseGraph."""

    def __init__(self, dimension: str):
        if dimension not in ("planar", "spatial"):
            raise ValueError(f"dimension must be 'planar' or 'spatial', got {dimension!r}")
        self.dimension = dimension
        self._pose_kind = "pose2" if dimension == "planar" else "pose3"
        self._pose_type = lie.Pose2 if dimension == "planar" else lie.Pose3
        self._dim = 3 if dimension == "planar" else 6
        self._poses: dict[int, object] = {}
        self._scales: list[float] = []  # initial log(s) per scale variable
        self._factors: list[Factor] = []
        self._has_anchor = False

    def _pose_id(self, index: int) -> VariableId:
        if index not in self._poses:
            raise MissingVariable(f"pose variable {index} not added")
        return VariableId(index, self._pose_kind)

    def add_pose(self, index: int, initial) -> VariableId:
        if not isinstance(initial, self._pose_type):
            raise TypeError(f"{self.dimension} graph needs {self._pose_type.__name__} values")
        if index in self._poses:
            raise ValueError(f"pose variable {index} added twice")
        self._poses[index] = initial
        return VariableId(index, self._pose_kind)

    def _add_binary(self, kind, i, j, measurement, info, scale_id=None, meta=None, s0=None):
        if i == j:
            raise InvalidEdge(f"self edge {i}->{j}")
        if not isinstance(measurement, self._pose_type):
            raise TypeError("measurement type does not match graph dimension")
        f = Factor(kind, (self._pose_id(i), self._pose_id(j)), measurement,
                   _check_info(info, self._dim), scale_id, meta)
        self._factors.append(f)

    def add_odometry(self, i: int, j: int, measurement, info) -> None:
        self._add_binary(FactorKind.ODOMETRY, i, j, measurement, info)

    def add_loop_closure(self, i: int, j: int, measurement, info, meta: MatchStats | None = None) -> None:
        self._add_binary(FactorKind.LOOP_CLOSURE, i, j, measurement, info, meta=meta)

    def add_visual_scaled(self, i: int, j: int, measurement, info, s0: float = 1.0,
                          meta: MatchStats | None = None) -> VariableId:
        if s0 <= 0.0:
            raise ValueError("initial scale must be positive")
        scale_id = VariableId(len(self._scales), "scale")
        self._scales.append(math.log(s0))
        self._add_binary(FactorKind.VISUAL_SCALED, i, j, measurement, info,
                         scale_id=scale_id, meta=meta)
        return scale_id

    def add_depth_prior(self, i: int, depth: float, info) -> None:
        info = np.atleast_2d(np.asarray(info, dtype=float))
        self._factors.append(Factor(FactorKind.DEPTH_PRIOR, (self._pose_id(i),),
                                    float(depth), _check_info(info, 1)))

    def add_anchor(self, i: int, prior, info) -> None:
        if not isinstance(prior, self._pose_type):
            raise TypeError("anchor prior type does not match graph dimension")
        self._factors.append(Factor(FactorKind.ANCHOR_PRIOR, (self._pose_id(i),),
                                    prior, _check_info(info, self._dim)))
        self._has_anchor = True

    def build(self, require_anchor: bool = True) -> PoseGraph:
        """Freeze the graph. Pass require_anchor=False to skip the gauge check
        for graphs that will be gauge-fixed some other way."""
        if require_anchor and not self._has_anchor:
            raise ValueError("graph has no anchor prior; pass require_anchor=False "
                             "to build an explicitly gauge-free graph")
        indices = sorted(self._poses)
        if indices != list(range(len(indices))):
            raise ValueError("pose indices must be dense 0..n-1")
        variables = tuple(
            [(VariableId(i, self._pose_kind), self._poses[i]) for i in indices]
            + [(VariableId(k, "scale"), s) for k, s in enumerate(self._scales)]
        )
        return PoseGraph(self.dimension, variables, tuple(self._factors))


# ---------------------------------------------------------------------------
# Factor evaluation
# ---------------------------------------------------------------------------


def _log(pose) -> np.ndarray:
    return lie.log_se2(pose) if isinstance(pose, lie.Pose2) else lie.se3_log(pose)


def _dlog(pose) -> np.ndarray:
    return lie.se2_dlog(pose) if isinstance(pose, lie.Pose2) else lie.se3_dlog(pose)


def _adjoint(pose) -> np.ndarray:
    return lie.adjoint_se2(pose) if isinstance(pose, lie.Pose2) else lie.adjoint_se3(pose)


def _scaled_measurement(f: Factor, values: GraphValues):
    s = values.scale(f.scale_id.index)
    m = f.measurement
    if isinstance(m, lie.Pose2):
        return lie.Pose2(s * m.x, s * m.y, m.rot), s
    return lie.Pose3(s * m.t, m.rot), s


def residual(f: Factor, values: GraphValues) -> np.ndarray:
    """Whitened-by-nothing factor residual (information is applied in chi2)."""
    if f.kind == FactorKind.DEPTH_PRIOR:
        p = values.pose(f.endpoints[0])
        z = p.y if isinstance(p, lie.Pose2) else p.t[2]
        return np.array([z - f.measurement])
    if f.kind == FactorKind.ANCHOR_PRIOR:
        p = values.pose(f.endpoints[0])
        return _log(lie.between(f.measurement, p))
    xi = values.pose(f.endpoints[0])
    xj = values.pose(f.endpoints[1])
    delta = lie.between(xi, xj)
    if f.kind == FactorKind.VISUAL_SCALED:
        meas, _ = _scaled_measurement(f, values)
    else:
        meas = f.measurement
    return _log(lie.between(meas, delta))


def jacobians(f: Factor, values: GraphValues) -> dict[VariableId, np.ndarray]:
    """Analytic residual Jacobians, keyed by variable, right-perturbation."""
    if f.kind == FactorKind.DEPTH_PRIOR:
        p = values.pose(f.endpoints[0])
        if isinstance(p, lie.Pose2):
            row = np.array([[math.sin(p.theta), math.cos(p.theta), 0.0]])
        else:
            row = np.zeros((1, 6))
            row[0, :3] = p.rot.matrix()[2]
        return {f.endpoints[0]: row}
    if f.kind == FactorKind.ANCHOR_PRIOR:
        p = values.pose(f.endpoints[0])
        e = lie.between(f.measurement, p)
        return {f.endpoints[0]: _dlog(e)}

    xi = values.pose(f.endpoints[0])
    xj = values.pose(f.endpoints[1])
    delta = lie.between(xi, xj)
    if f.kind == FactorKind.VISUAL_SCALED:
        meas, s = _scaled_measurement(f, values)
    else:
        meas, s = f.measurement, None
    e = lie.between(meas, delta)
    g = _dlog(e)
    out = {
        f.endpoints[0]: -g @ _adjoint(delta.inverse()),
        f.endpoints[1]: g.copy(),
    }
    if f.kind == FactorKind.VISUAL_SCALED:
        # translation of e depends on log s through -s * R_m^T t_m; the
        # rotation rows are scale-independent
        m = f.measurement
        if isinstance(m, lie.Pose2):
            dt = m.rot.inverse().rotate(m.translation) * (-s)
            a, b = lie._se2_v_coeffs(e.theta)
            denom = a * a + b * b
            vinv = np.array([[a, b], [-b, a]]) / denom
            col = np.zeros((3, 1))
            col[:2, 0] = vinv @ dt
        else:
            dt = m.rot.inverse().rotate(m.t) * (-s)
            col = np.zeros((6, 1))
            phi = e.rot.log()
            col[:3, 0] = lie.so3_left_jacobian_inv(phi) @ dt
        out[f.scale_id] = col
    return out


def chi2(g: PoseGraph, values: GraphValues) -> float:
    total = 0.0
    for f in g.factors:
        r = residual(f, values)
        total += float(r @ f.info @ r)
    return total


def adaptive_info(base, stats: MatchStats) -> np.ndarray:
    """Scale an information matrix by match confidence.

    Information grows linearly with inlier count (clamped at 4x the reference
    of 100 inliers) and shrinks when matches cover less than a quarter of the
    image.
    """
    base = np.asarray(base, dtype=float)
    gain = min(stats.inlier_count / _N_REF, _GAIN_MAX)
    gain *= min(stats.coverage / _COVERAGE_REF, 1.0)
    return base * gain

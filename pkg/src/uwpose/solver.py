"""Sparse Gauss-Newton / Levenberg-Marquardt over pose graphs.

Normal equations are assembled in tangent coordinates (right perturbation)
with poses ordered by index followed by scale variables, and solved with a
sparse LU factorization in natural ordering so repeated runs are bitwise
deterministic. An approximate-minimum-degree ordering can be switched on for
larger problems at the cost of that determinism guarantee across scipy
versions.

Also provides the log-weighted chordal orientation cost used as the
refinement reward: sqrt(sum_ij w_ij * ||R_i R_ij - R_j||_F^2) with
w_ij = 1 + beta * log(||t_ij|| / t_mean + eps), clamped from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import graph as graphmod
from . import lie
from .errors import (
    AllZeroTranslations,
    Disconnected,
    EmptyEdgeSet,
    NonPlanarGraph,
    SingularHessian,
)
from .graph import FactorKind, GraphValues, PoseGraph

_LM_LAMBDA_MAX = 1e10
_LM_LAMBDA_MIN = 1e-15


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 100
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    lm_lambda0: float = 1e-4
    lm_up: float = 10.0
    lm_down: float = 10.0
    robust_kernel: str = "none"  # "none" | "huber"
    huber_delta: float = 1.0
    ordering: str = "natural"  # "natural" | "amd"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        for name in ("abs_tol", "rel_tol", "lm_lambda0", "lm_up", "lm_down", "huber_delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.robust_kernel not in ("none", "huber"):
            raise ValueError(f"unknown robust kernel {self.robust_kernel!r}")
        if self.ordering not in ("natural", "amd"):
            raise ValueError(f"unknown ordering {self.ordering!r}")


@dataclass
class SolveReport:
    iterations: int
    initial_chi2: float
    final_chi2: float
    converged: bool
    reason: str  # "tol" | "max_iters" | "diverged"
    # objective value at the start plus after every (accepted) step
    chi2_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class WeightingParams:
    beta: float = 0.0
    epsilon: float = 1e-6
    clamp_floor: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


# ---------------------------------------------------------------------------
# Connectivity
# ---------------------------------------------------------------------------


def check_connected(g: PoseGraph) -> None:
    """Union-find over pose variables and binary factors; raises Disconnected."""
    n = g.pose_count
    if n == 0:
        raise Disconnected("graph has no pose variables")
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for f in g.binary_factors():
        ra, rb = find(f.endpoints[0].index), find(f.endpoints[1].index)
        if ra != rb:
            parent[ra] = rb
    roots = {find(i) for i in range(n)}
    if len(roots) > 1:
        raise Disconnected(f"pose graph splits into {len(roots)} components")


# ---------------------------------------------------------------------------
# Objective and assembly
# ---------------------------------------------------------------------------


def _huber_rho(e: float, delta: float) -> float:
    if e <= delta:
        return e * e
    return 2.0 * delta * e - delta * delta


def objective(g: PoseGraph, values: GraphValues, cfg: SolveConfig) -> float:
    """chi2, or its Huber-robustified version when the kernel is enabled."""
    if cfg.robust_kernel == "none":
        return graphmod.chi2(g, values)
    total = 0.0
    for f in g.factors:
        r = graphmod.residual(f, values)
        total += _huber_rho(math.sqrt(max(float(r @ f.info @ r), 0.0)), cfg.huber_delta)
    return total


def _column_layout(g: PoseGraph) -> tuple[dict, int]:
    """Column offsets per variable: poses by index order, then scales."""
    d = g.pose_dim
    offsets = {}
    col = 0
    for vid, _ in g.variables:
        if vid.kind != "scale":
            offsets[vid] = (col, d)
            col += d
    for vid, _ in g.variables:
        if vid.kind == "scale":
            offsets[vid] = (col, 1)
            col += 1
    return offsets, col


def assemble_normal_equations(g: PoseGraph, values: GraphValues,
                              cfg: SolveConfig | None = None):
    """Build (H, b) of the Gauss-Newton system H delta = -b as (csc, ndarray)."""
    cfg = cfg or SolveConfig()
    offsets, ncols = _column_layout(g)
    rows, cols, data = [], [], []
    b = np.zeros(ncols)
    for f in g.factors:
        r = graphmod.residual(f, values)
        jacs = graphmod.jacobians(f, values)
        w = 1.0
        if cfg.robust_kernel == "huber":
            e = math.sqrt(max(float(r @ f.info @ r), 0.0))
            if e > cfg.huber_delta:
                w = cfg.huber_delta / e
        items = sorted(jacs.items(), key=lambda kv: offsets[kv[0]][0])
        for vid_a, ja in items:
            off_a, dim_a = offsets[vid_a]
            b[off_a:off_a + dim_a] += w * (ja.T @ f.info @ r)
            for vid_b, jb in items:
                off_b, dim_b = offsets[vid_b]
                block = w * (ja.T @ f.info @ jb)
                for p in range(dim_a):
                    for q in range(dim_b):
                        rows.append(off_a + p)
                        cols.append(off_b + q)
                        data.append(block[p, q])
    h = sp.coo_matrix((data, (rows, cols)), shape=(ncols, ncols)).tocsc()
    return h, b


def _solve_linear(h, b, cfg: SolveConfig) -> np.ndarray:
    permc = "NATURAL" if cfg.ordering == "natural" else "COLAMD"
    try:
        lu = spla.splu(h, permc_spec=permc)
        delta = lu.solve(b)
    except RuntimeError as exc:
        raise SingularHessian(str(exc)) from None
    if not np.all(np.isfinite(delta)):
        raise SingularHessian("linear solve produced non-finite step")
    return delta


def _retract_all(g: PoseGraph, values: GraphValues, delta: np.ndarray) -> GraphValues:
    offsets, _ = _column_layout(g)
    out = values.copy()
    for vid, _init in g.variables:
        off, dim = offsets[vid]
        if vid.kind == "scale":
            out.log_scales[vid.index] += float(delta[off])
        else:
            out.poses[vid.index] = lie.retract(out.poses[vid.index], delta[off:off + dim])
    return out


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def gauss_newton(g: PoseGraph, cfg: SolveConfig | None = None):
    """Plain Gauss-Newton. Returns (values, SolveReport)."""
    cfg = cfg or SolveConfig()
    check_connected(g)
    values = g.initial_values()
    c_prev = objective(g, values, cfg)
    initial = c_prev
    trace = [c_prev]
    iterations = 0
    converged, reason = False, "max_iters"
    for _ in range(cfg.max_iters):
        h, b = assemble_normal_equations(g, values, cfg)
        delta = _solve_linear(h, -b, cfg)
        values = _retract_all(g, values, delta)
        c_new = objective(g, values, cfg)
        iterations += 1
        trace.append(c_new)
        if not math.isfinite(c_new):
            converged, reason = False, "diverged"
            break
        decrease = abs(c_prev - c_new)
        if decrease < cfg.abs_tol or decrease < cfg.rel_tol * max(c_prev, 1e-300):
            converged, reason = True, "tol"
            c_prev = c_new
            break
        c_prev = c_new
    return values, SolveReport(iterations, initial, c_prev, converged, reason, trace)


def levenberg_marquardt(g: PoseGraph, cfg: SolveConfig | None = None):
    """Damped Gauss-Newton; accepted chi2 sequence is non-increasing.

    Returns (values, SolveReport). The report's final_chi2 never exceeds
    initial_chi2 because only improving steps are kept.
    """
    cfg = cfg or SolveConfig()
    check_connected(g)
    values = g.initial_values()
    c_prev = objective(g, values, cfg)
    initial = c_prev
    trace = [c_prev]
    lam = cfg.lm_lambda0
    iterations = 0
    converged, reason = False, "max_iters"
    for _ in range(cfg.max_iters):
        h, b = assemble_normal_equations(g, values, cfg)
        diag = sp.diags(h.diagonal())
        accepted = False
        while lam <= _LM_LAMBDA_MAX:
            try:
                delta = _solve_linear((h + lam * diag).tocsc(), -b, cfg)
            except SingularHessian:
                if lam >= _LM_LAMBDA_MAX:
                    raise
                lam *= cfg.lm_up
                continue
            candidate = _retract_all(g, values, delta)
            c_new = objective(g, candidate, cfg)
            if math.isfinite(c_new) and c_new < c_prev:
                accepted = True
                break
            lam *= cfg.lm_up
        iterations += 1
        if not accepted:
            # even near-gradient-descent steps cannot reduce the objective:
            # numerically at a local minimum
            converged, reason = True, "tol"
            break
        values = candidate
        decrease = c_prev - c_new
        c_prev = c_new
        trace.append(c_new)
        lam = max(lam / cfg.lm_down, _LM_LAMBDA_MIN)
        if decrease < cfg.abs_tol or decrease < cfg.rel_tol * max(c_prev, 1e-300):
            converged, reason = True, "tol"
            break
    return values, SolveReport(iterations, initial, c_prev, converged, reason, trace)


# ---------------------------------------------------------------------------
# Orientation cost
# ---------------------------------------------------------------------------


def orientation_cost_log(g: PoseGraph, values: GraphValues,
                         params: WeightingParams | None = None,
                         edge_filter=None) -> float:
    """Log-weighted chordal orientation cost over binary edges.

    Measured relative rotations R_ij are compared against the current
    absolute estimates; edges with longer measured baselines get weight
    above 1, shorter ones below (floored at params.clamp_floor). beta = 0
    gives the uniform cost.
    """
    params = params or WeightingParams()
    if g.dimension != "planar":
        raise NonPlanarGraph("orientation cost is defined on planar graphs")
    edges = [f for f in g.binary_factors() if edge_filter is None or edge_filter(f)]
    if not edges:
        raise EmptyEdgeSet("no binary edges selected")
    t_norms = [math.hypot(f.measurement.x, f.measurement.y) for f in edges]
    t_mean = sum(t_norms) / len(t_norms)
    if t_mean == 0.0:
        raise AllZeroTranslations("mean edge translation is zero")
    total = 0.0
    for f, tn in zip(edges, t_norms):
        w = 1.0 + params.beta * math.log(tn / t_mean + params.epsilon)
        w = max(w, params.clamp_floor)
        ri = values.pose(f.endpoints[0]).rot.matrix()
        rj = values.pose(f.endpoints[1]).rot.matrix()
        diff = ri @ f.measurement.rot.matrix() - rj
        total += w * float(np.sum(diff * diff))
    return math.sqrt(total)

"""Five-stage back-end: spatial solve, planar projection, guarded episodic
refinement, lift-back, and a final spatial polish.

Stage 1 runs Levenberg-Marquardt on the full spatial graph. Stage 2 projects
every pose to the horizontal plane, remembering each pose's roll, pitch, and
depth, and builds a planar graph: binary measurements are projected through
the same ZYX decomposition and their 6x6 information matrices are reduced to
the (x, y, yaw) block by Schur complement; depth priors are dropped (depth is
held by the carried z until the final stage re-imposes them). Stage 3 runs
the guarded refinement loop on the planar graph. Stage 4 lifts the refined
planar poses back to SE(3), reattaching the stored roll, pitch, and z values
unchanged. Stage 5 re-runs LM on the original spatial graph from the lifted
values.

If the final chi2 lands above the stage-1 chi2 (possible when refinement
trades planar orientation cost against full 3D chi2), the stage-1 solution
is returned instead and the report says so; the pipeline therefore never
returns values worse than stage 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lie, refine as rl
from .graph import (Factor, FactorKind, GraphBuilder, GraphValues, PoseGraph,
                    chi2)
from .solver import (SolveConfig, SolveReport, WeightingParams,
                     levenberg_marquardt, orientation_cost_log)

_STAGES = ("initial", "stage1_lm3d", "stage2_project", "stage3_refine",
           "stage4_lift", "stage5_lm3d")

_KEEP = np.array([0, 1, 5])      # x, y, yaw rows of a spatial tangent
_DROP = np.array([2, 3, 4])      # z, roll-axis, pitch-axis rows


@dataclass(frozen=True)
class PipelineConfig:
    solve: SolveConfig = field(default_factory=SolveConfig)
    weighting: WeightingParams = field(default_factory=WeightingParams)
    refine_budget: int = 64
    policy: object = "greedy"    # "greedy", a policy file path, or a Policy
    final_solve: SolveConfig = field(default_factory=SolveConfig)

    def __post_init__(self):
        if self.refine_budget < 0:
            raise ValueError("refine_budget must be >= 0")


@dataclass(frozen=True)
class StageMetrics:
    stage: str
    chi2: float
    oc_log: float


@dataclass(frozen=True)
class PipelineReport:
    stages: list[StageMetrics]
    stage1_chi2: float
    stage4_chi2: float
    final_chi2: float
    fell_back_to_stage1: bool
    solve1: SolveReport
    solve5: SolveReport
    refine: rl.RefineReport
    carried: dict[int, tuple[float, float, float]]  # pose -> (roll, pitch, z)

    def lines(self) -> list[str]:
        out = []
        for s in self.stages:
            out.append(f"{s.stage}.chi2={s.chi2:.17g}")
            out.append(f"{s.stage}.oc_log={s.oc_log:.17g}")
        out.append(f"stage1.iterations={self.solve1.iterations}")
        out.append(f"stage1.reason={self.solve1.reason}")
        out.append(f"stage3.rolled_back={self.refine.rolled_back}")
        out.append(f"stage3.steps={self.refine.steps}")
        out.append(f"stage5.iterations={self.solve5.iterations}")
        out.append(f"stage5.reason={self.solve5.reason}")
        out.append(f"final_chi2={self.final_chi2:.17g}")
        out.append(f"fell_back_to_stage1={str(self.fell_back_to_stage1).lower()}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _marginalize_info(info: np.ndarray) -> np.ndarray:
    """Reduce a 6x6 information matrix to its (x, y, yaw) block."""
    kk = info[np.ix_(_KEEP, _KEEP)]
    km = info[np.ix_(_KEEP, _DROP)]
    mm = info[np.ix_(_DROP, _DROP)]
    reduced = kk - km @ np.linalg.solve(mm, km.T)
    return 0.5 * (reduced + reduced.T)


def project_graph(g3: PoseGraph, values3: GraphValues):
    """Planar graph + projected values + carried (roll, pitch, z) per pose.

    Binary measurements project through the ZYX decomposition; information
    matrices are Schur-marginalized onto the planar block. Depth priors are
    dropped; anchors project like measurements.
    """
    if g3.dimension != "spatial":
        raise ValueError("projection expects a spatial graph")
    carried: dict[int, tuple[float, float, float]] = {}
    planar_pose: dict[int, lie.Pose2] = {}
    b = GraphBuilder("planar")
    for vid, _ in g3.variables:
        if vid.kind == "scale":
            continue
        p2, roll, pitch, z = lie.project_se3_to_se2(values3.pose(vid))
        carried[vid.index] = (roll, pitch, z)
        planar_pose[vid.index] = p2
        b.add_pose(vid.index, p2)
    for f in g3.factors:
        if f.kind == FactorKind.DEPTH_PRIOR:
            continue
        if f.kind == FactorKind.ANCHOR_PRIOR:
            prior2, _, _, _ = lie.project_se3_to_se2(f.measurement)
            b.add_anchor(f.endpoints[0].index, prior2,
                         _marginalize_info(f.info))
            continue
        i, j = (v.index for v in f.endpoints[:2])
        m2, _, _, _ = lie.project_se3_to_se2(f.measurement)
        info2 = _marginalize_info(f.info)
        if f.kind == FactorKind.ODOMETRY:
            b.add_odometry(i, j, m2, info2)
        elif f.kind == FactorKind.LOOP_CLOSURE:
            b.add_loop_closure(i, j, m2, info2, meta=f.meta)
        else:
            s0 = values3.scale(f.scale_id.index)
            b.add_visual_scaled(i, j, m2, info2, s0=s0, meta=f.meta)
    g2 = b.build(require_anchor=False)
    values2 = g2.initial_values()
    return g2, values2, carried


def lift_values(values2: GraphValues, carried, values3: GraphValues) -> GraphValues:
    """Rebuild spatial values from planar poses plus carried roll/pitch/z.

    Scale estimates pass through from the spatial values unchanged.
    """
    out = GraphValues(log_scales=dict(values3.log_scales))
    for idx, p2 in values2.poses.items():
        roll, pitch, z = carried[idx]
        out.poses[idx] = lie.lift_se2_to_se3(p2, roll, pitch, z)
    return out


def _resolve_policy(source) -> rl.Policy:
    if isinstance(source, rl.Policy):
        return source
    if source == "greedy":
        return rl.GreedyPolicy()
    policy, _ = rl.load_policy(source)
    return policy


def run_pipeline(g3: PoseGraph, cfg: PipelineConfig | None = None):
    """Run all five stages; returns (spatial values, PipelineReport)."""
    cfg = cfg or PipelineConfig()
    policy = _resolve_policy(cfg.policy)
    stages = []

    def planar_oc(g2, v2):
        return orientation_cost_log(g2, v2, cfg.weighting)

    initial3 = g3.initial_values()
    g2_init, v2_init, _ = project_graph(g3, initial3)
    stages.append(StageMetrics("initial", chi2(g3, initial3),
                               planar_oc(g2_init, v2_init)))

    values1, solve1 = levenberg_marquardt(g3, cfg.solve)
    stage1_chi2 = chi2(g3, values1)
    g2, v2, carried = project_graph(g3, values1)
    stages.append(StageMetrics("stage1_lm3d", stage1_chi2, planar_oc(g2, v2)))
    stages.append(StageMetrics("stage2_project", chi2(g2, v2),
                               planar_oc(g2, v2)))

    v2_ref, refine_report = rl.refine(g2, v2, policy, cfg.refine_budget,
                                      guard=True, weighting=cfg.weighting)
    stages.append(StageMetrics("stage3_refine", chi2(g2, v2_ref),
                               planar_oc(g2, v2_ref)))

    lifted = lift_values(v2_ref, carried, values1)
    lifted_graph = PoseGraph(g3.dimension, tuple(
        (vid, lifted.log_scales[vid.index] if vid.kind == "scale"
         else lifted.poses[vid.index]) for vid, _ in g3.variables),
        g3.factors)
    stage4_chi2 = chi2(g3, lifted)
    stages.append(StageMetrics("stage4_lift", stage4_chi2,
                               planar_oc(g2, v2_ref)))

    values5, solve5 = levenberg_marquardt(lifted_graph, cfg.final_solve)
    final_chi2 = chi2(g3, values5)
    g2_fin, v2_fin, _ = project_graph(g3, values5)
    stages.append(StageMetrics("stage5_lm3d", final_chi2,
                               planar_oc(g2_fin, v2_fin)))

    # LM never accepts an uphill step, so the polish cannot exceed its start
    assert final_chi2 <= max(stage1_chi2, stage4_chi2) * (1 + 1e-12) + 1e-12

    fell_back = final_chi2 > stage1_chi2
    if fell_back:
        values5, final_chi2 = values1, stage1_chi2

    report = PipelineReport(stages, stage1_chi2, stage4_chi2, final_chi2,
                            fell_back, solve1, solve5, refine_report, carried)
    return values5, report

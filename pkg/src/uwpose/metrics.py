"""Trajectory evaluation: similarity alignment, ATE, RPE, drift percentage.

Trajectories are sequences of Pose3 (or bare (n, 3) point arrays where only
translations matter). Alignment follows the closed-form least-squares
similarity fit with the determinant-sign correction on the SVD, so degenerate
clouds never produce an improper rotation; degeneracy (collinear or coincident
points) is flagged on the result rather than raised, since the corrected
solution is still the least-squares one.

RPE reports the mean translational magnitude and mean rotational geodesic
angle of per-pair relative-pose errors. The combined deg/m figure is the mean
rotational error divided by the mean ground-truth distance traveled per pair
(endpoint-to-endpoint path length along the trajectory), computed by
deg_per_meter. Drift is endpoint-based: final-position error after aligning
the starting poses, as a percentage of total ground-truth path length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lie
from .errors import DegenerateInput, LengthMismatch, ZeroPathLength

_DEGENERATE_SV_TOL = 1e-9


@dataclass(frozen=True)
class AlignmentResult:
    scale: float
    rotation: lie.Rot3
    translation: np.ndarray
    rmse_after: float
    degenerate: bool = False

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return self.scale * pts @ self.rotation.matrix().T + self.translation


def _points(traj) -> np.ndarray:
    if isinstance(traj, np.ndarray):
        return traj.reshape(-1, 3).astype(float)
    first = traj[0] if len(traj) else None
    if isinstance(first, lie.Pose3):
        return np.array([p.t for p in traj], dtype=float)
    if isinstance(first, lie.Pose2):
        return np.array([[p.x, p.y, 0.0] for p in traj], dtype=float)
    return np.asarray(traj, dtype=float).reshape(-1, 3)


def _poses3(traj) -> list:
    out = []
    for p in traj:
        if isinstance(p, lie.Pose3):
            out.append(p)
        elif isinstance(p, lie.Pose2):
            out.append(lie.lift_se2_to_se3(p, 0.0, 0.0, 0.0))
        else:
            raise TypeError(f"expected poses, got {type(p).__name__}")
    return out


def poses_from_tum(trajectory) -> list:
    """Convert TUM rows (timestamp, x, y, z, qx, qy, qz, qw) to Pose3 list."""
    rows = np.asarray(getattr(trajectory, "rows", trajectory), dtype=float)
    out = []
    for r in rows.reshape(-1, 8):
        rot = lie.Rot3(r[7], r[4], r[5], r[6])
        out.append(lie.Pose3(r[1:4], rot))
    return out


def umeyama_align(est, gt, with_scale: bool = False) -> AlignmentResult:
    """Least-squares similarity transform s*R*est + t ~ gt.

    with_scale off fixes s = 1. Collinear or coincident clouds are reported
    via the degenerate flag; the reflection-corrected solution is still
    returned.
    """
    e = _points(est)
    g = _points(gt)
    if e.shape[0] != g.shape[0]:
        raise DegenerateInput(f"point counts differ: {e.shape[0]} vs {g.shape[0]}")
    if e.shape[0] < 3:
        raise DegenerateInput(f"need at least 3 points, got {e.shape[0]}")

    mu_e = e.mean(axis=0)
    mu_g = g.mean(axis=0)
    de = e - mu_e
    dg = g - mu_g
    n = e.shape[0]

    cov = dg.T @ de / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    rot = u @ s_fix @ vt

    var_e = float(np.mean(np.sum(de**2, axis=1)))
    degenerate = (var_e < _DEGENERATE_SV_TOL
                  or d[1] <= _DEGENERATE_SV_TOL * max(d[0], 1.0))

    if with_scale:
        scale = float(np.trace(np.diag(d) @ s_fix) / var_e) if var_e > 0 else 1.0
        if scale <= 0:
            scale = 1.0
            degenerate = True
    else:
        scale = 1.0
    trans = mu_g - scale * rot @ mu_e

    resid = scale * e @ rot.T + trans - g
    rmse = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return AlignmentResult(scale, lie.Rot3.from_matrix(rot), trans, rmse,
                           degenerate)


def ate_rmse(est, gt, align: str = "none") -> float:
    """Absolute trajectory error: RMSE of translations, optionally aligned.

    align: "none" (raw), "se3" (rigid fit), or "sim3" (similarity fit).
    """
    if align not in ("none", "se3", "sim3"):
        raise ValueError(f"align must be none, se3, or sim3, got {align!r}")
    e = _points(est)
    g = _points(gt)
    if e.shape[0] != g.shape[0]:
        raise LengthMismatch(f"trajectory lengths differ: {e.shape[0]} vs {g.shape[0]}")
    if e.shape[0] == 0:
        raise LengthMismatch("empty trajectories")
    if align != "none":
        res = umeyama_align(e, g, with_scale=(align == "sim3"))
        e = res.apply(e)
    return float(np.sqrt(np.mean(np.sum((e - g) ** 2, axis=1))))


def _pair_errors(est, gt, delta: int):
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")
    e = _poses3(est)
    g = _poses3(gt)
    if len(e) != len(g):
        raise LengthMismatch(f"trajectory lengths differ: {len(e)} vs {len(g)}")
    if len(e) <= delta:
        raise LengthMismatch(f"need more than delta={delta} poses, got {len(e)}")
    trans, rots = [], []
    for k in range(len(e) - delta):
        rel_g = g[k].inverse().compose(g[k + delta])
        rel_e = e[k].inverse().compose(e[k + delta])
        err = rel_g.inverse().compose(rel_e)
        trans.append(float(np.linalg.norm(err.t)))
        rots.append(err.rot.angle())
    return trans, rots, g


def pair_errors(est, gt, delta: int = 1) -> np.ndarray:
    """Per-pair relative errors, one row per (k, k+delta) pair.

    Columns: translation magnitude in meters, rotation in degrees. rpe()
    reports the column means of this table.
    """
    trans, rots, _ = _pair_errors(est, gt, delta)
    return np.column_stack([trans, np.degrees(rots)])


def rpe(est, gt, delta: int = 1) -> tuple[float, float]:
    """Relative pose error between frames i and i+delta.

    Returns (mean translational magnitude in meters per pair, mean rotational
    geodesic angle in degrees).
    """
    trans, rots, _ = _pair_errors(est, gt, delta)
    return float(np.mean(trans)), math.degrees(float(np.mean(rots)))


def deg_per_meter(est, gt, delta: int = 1) -> float:
    """Mean rotational RPE divided by mean ground-truth distance per pair."""
    _, rots, g = _pair_errors(est, gt, delta)
    steps = [float(np.linalg.norm(g[k + 1].t - g[k].t)) for k in range(len(g) - 1)]
    dists = [sum(steps[k:k + delta]) for k in range(len(g) - delta)]
    mean_dist = float(np.mean(dists))
    if mean_dist <= 0:
        raise ZeroPathLength("ground truth does not move between paired frames")
    return math.degrees(float(np.mean(rots))) / mean_dist


def drift_percent(est, gt) -> float:
    """Endpoint drift after start-alignment, as a percent of gt path length."""
    e = _poses3(est)
    g = _poses3(gt)
    if len(e) != len(g):
        raise LengthMismatch(f"trajectory lengths differ: {len(e)} vs {len(g)}")
    if len(e) < 2:
        raise LengthMismatch("need at least 2 poses")
    pts = _points(g)
    path = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    if path <= 0:
        raise ZeroPathLength("ground-truth path length is zero")
    # move the estimate so its first pose coincides with the ground truth's
    fix = g[0].compose(e[0].inverse())
    end = fix.compose(e[-1])
    err = float(np.linalg.norm(end.t - g[-1].t))
    return 100.0 * err / path

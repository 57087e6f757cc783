"""Synthetic trajectory and pose-graph generation.

Produces grid-sweep and ring trajectories with Gaussian noise injected on
odometry, loop-closure, and depth measurements, keeping the noiseless ground
truth alongside the noisy graph for evaluation. Noise is drawn in the tangent
space and applied by right-multiplication, so measurements stay on-manifold.
Initial values are dead-reckoned from the noisy odometry, not ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .errors import DegenerateLayout
from .graph import GraphBuilder, PoseGraph

# Sigma floor when converting to information, so noiseless configs still
# produce finite diagonal info matrices.
_SIGMA_FLOOR = 1e-3

_ANCHOR_INFO = 1e6


@dataclass(frozen=True)
class SimConfig:
    n_poses: int = 25
    layout: str = "grid"            # "grid" | "ring"
    grid_width: int = 5
    grid_height: int = 5
    ring_radius: float = 5.0
    dimension: str = "planar"       # "planar" | "spatial"
    step: float = 1.0
    odo_sigma: tuple[float, float] = (0.05, 0.01)   # (sigma_xy m, sigma_theta rad)
    loop_prob: float = 0.0
    loop_radius: float = 1.5
    loop_sigma_scale: float = 1.0
    depth_profile: str = "constant"  # "constant" | "sinusoid"
    depth_constant: float = -10.0
    depth_amplitude: float = 1.0
    depth_period: float = 12.0
    depth_sigma: float = 0.02
    with_depth_priors: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.layout not in ("grid", "ring"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.dimension not in ("planar", "spatial"):
            raise ValueError(f"unknown dimension {self.dimension!r}")
        if self.depth_profile not in ("constant", "sinusoid"):
            raise ValueError(f"unknown depth_profile {self.depth_profile!r}")
        if min(self.odo_sigma) < 0 or self.depth_sigma < 0:
            raise ValueError("sigmas must be non-negative")
        if not 0.0 <= self.loop_prob <= 1.0:
            raise ValueError("loop_prob must lie in [0, 1]")
        if self.step <= 0 or self.ring_radius <= 0 or self.depth_period <= 0:
            raise ValueError("step, ring_radius, and depth_period must be positive")
        if self.loop_sigma_scale <= 0:
            raise ValueError("loop_sigma_scale must be positive")


@dataclass(frozen=True)
class SimOutput:
    ground_truth: list
    graph: PoseGraph
    metadata: dict = field(default_factory=dict)


def _depth_at(cfg: SimConfig, k: int) -> float:
    if cfg.depth_profile == "constant":
        return cfg.depth_constant
    return cfg.depth_constant + cfg.depth_amplitude * math.sin(
        2.0 * math.pi * k / cfg.depth_period)


def _grid_waypoints(cfg: SimConfig):
    # Serpentine sweep over a grid_width x grid_height lattice, row by row,
    # alternating direction so consecutive waypoints stay one step apart.
    pts = []
    for row in range(cfg.grid_height):
        cols = range(cfg.grid_width)
        if row % 2 == 1:
            cols = reversed(cols)
        for col in cols:
            pts.append((col * cfg.step, row * cfg.step))
    return pts[:cfg.n_poses]


def _ring_waypoints(cfg: SimConfig):
    pts = []
    for k in range(cfg.n_poses):
        phi = 2.0 * math.pi * k / cfg.n_poses
        pts.append((cfg.ring_radius * math.cos(phi),
                    cfg.ring_radius * math.sin(phi)))
    return pts


def _ground_truth(cfg: SimConfig):
    if cfg.layout == "grid":
        if cfg.n_poses > cfg.grid_width * cfg.grid_height:
            raise DegenerateLayout(
                f"grid {cfg.grid_width}x{cfg.grid_height} holds at most "
                f"{cfg.grid_width * cfg.grid_height} poses, asked for {cfg.n_poses}")
        pts = _grid_waypoints(cfg)
    else:
        pts = _ring_waypoints(cfg)

    # Yaw faces the next waypoint; the last pose keeps the previous heading.
    yaws = []
    for k in range(len(pts)):
        a = pts[k]
        b = pts[k + 1] if k + 1 < len(pts) else None
        if b is None:
            yaws.append(yaws[-1])
        else:
            yaws.append(math.atan2(b[1] - a[1], b[0] - a[0]))

    poses = []
    for k, ((x, y), yaw) in enumerate(zip(pts, yaws)):
        if cfg.dimension == "planar":
            poses.append(lie.Pose2(x, y, lie.Rot2(yaw)))
        else:
            z = _depth_at(cfg, k)
            poses.append(lie.Pose3(np.array([x, y, z]),
                                   lie.Rot3.from_yaw_pitch_roll(yaw, 0.0, 0.0)))
    return poses


def _tangent_sigma(cfg: SimConfig, scale: float = 1.0) -> np.ndarray:
    sxy, sth = cfg.odo_sigma
    if cfg.dimension == "planar":
        sig = np.array([sxy, sxy, sth])
    else:
        sig = np.array([sxy, sxy, sxy, sth, sth, sth])
    return sig * scale

def _diag_info(sigma: np.ndarray) -> np.ndarray:
    eff = np.maximum(sigma, _SIGMA_FLOOR)
    return np.diag(1.0 / eff**2)


def _noisy_relative(gt_i, gt_j, sigma: np.ndarray, rng: np.random.Generator):
    rel = gt_i.inverse().compose(gt_j)
    xi = rng.standard_normal(sigma.shape[0]) * sigma
    return lie.retract(rel, xi)


def _translation(pose) -> np.ndarray:
    if isinstance(pose, lie.Pose2):
        return np.array([pose.x, pose.y])
    return pose.t


def generate(cfg: SimConfig) -> SimOutput:
    """Generate a noisy pose graph plus its ground truth, deterministically per seed."""
    if cfg.n_poses < 2:
        raise DegenerateLayout(f"need at least 2 poses, got {cfg.n_poses}")
    gt = _ground_truth(cfg)
    rng = np.random.default_rng(cfg.seed)

    odo_sigma = _tangent_sigma(cfg)
    odo_info = _diag_info(odo_sigma)
    loop_sigma = _tangent_sigma(cfg, cfg.loop_sigma_scale)
    loop_info = _diag_info(loop_sigma)

    # Odometry measurements first, in index order, so the dead-reckoned
    # initials can be integrated before any other draws.
    odo_meas = [
        _noisy_relative(gt[k], gt[k + 1], odo_sigma, rng)
        for k in range(len(gt) - 1)
    ]
    initials = [gt[0]]
    for m in odo_meas:
        initials.append(initials[-1].compose(m))

    b = GraphBuilder(cfg.dimension)
    for k, x in enumerate(initials):
        b.add_pose(k, x)
    for k, m in enumerate(odo_meas):
        b.add_odometry(k, k + 1, m, odo_info)

    n_loops = 0
    for i in range(len(gt)):
        for j in range(i + 2, len(gt)):
            d = np.linalg.norm(_translation(gt[i]) - _translation(gt[j]))
            if d > cfg.loop_radius:
                continue
            if rng.uniform() >= cfg.loop_prob:
                continue
            b.add_loop_closure(i, j, _noisy_relative(gt[i], gt[j], loop_sigma, rng),
                               loop_info)
            n_loops += 1

    n_depth = 0
    if cfg.dimension == "spatial" and cfg.with_depth_priors:
        depth_info = 1.0 / max(cfg.depth_sigma, _SIGMA_FLOOR) ** 2
        for k, x in enumerate(gt):
            z = x.t[2] + rng.standard_normal() * cfg.depth_sigma
            b.add_depth_prior(k, z, np.array([[depth_info]]))
            n_depth += 1

    anchor_info = _ANCHOR_INFO * np.eye(3 if cfg.dimension == "planar" else 6)
    b.add_anchor(0, gt[0], anchor_info)

    meta = {
        "layout": cfg.layout,
        "dimension": cfg.dimension,
        "n_poses": len(gt),
        "n_odometry": len(odo_meas),
        "n_loop_closures": n_loops,
        "n_depth_priors": n_depth,
        "seed": cfg.seed,
        "odo_sigma": tuple(cfg.odo_sigma),
        "depth_sigma": cfg.depth_sigma,
    }
    return SimOutput(ground_truth=gt, graph=b.build(), metadata=meta)

import math

import numpy as np
import pytest

from uwpose import io, lie, metrics
from uwpose.errors import DegenerateInput, LengthMismatch, ZeroPathLength


def straight_chain(n=10, step=1.0):
    return [lie.Pose3(np.array([k * step, 0.0, 0.0]), lie.Rot3.identity())
            for k in range(n)]


def test_umeyama_identity():
    pts = np.random.default_rng(0).standard_normal((50, 3))
    r = metrics.umeyama_align(pts, pts, with_scale=True)
    assert abs(r.scale - 1.0) < 1e-12
    assert r.rotation.angle() < 1e-12
    assert np.abs(r.translation).max() < 1e-12
    assert r.rmse_after < 1e-12
    assert not r.degenerate


def test_umeyama_recovers_inverse_scale():
    pts = np.random.default_rng(1).standard_normal((40, 3))
    est = 0.5 * pts + np.array([1.0, -2.0, 0.5])
    r = metrics.umeyama_align(est, pts, with_scale=True)
    assert abs(r.scale - 2.0) < 1e-9
    assert r.rmse_after < 1e-9


def test_umeyama_rotation_only_without_scale():
    pts = np.random.default_rng(2).standard_normal((30, 3))
    rot = lie.Rot3.exp(np.array([0.3, -0.2, 0.9]))
    gt = pts @ rot.matrix().T
    r = metrics.umeyama_align(pts, gt, with_scale=False)
    assert r.scale == 1.0
    assert rot.inverse().compose(r.rotation).angle() < 1e-9
    assert r.rmse_after < 1e-9


def test_umeyama_monte_carlo_noise_consistency():
    # known similarity + sigma=0.01 noise: rmse ~ sigma*sqrt(3) within 20%
    sigma = 0.01
    rmses, scale_errs, rot_errs = [], [], []
    for t in range(100):
        rng = np.random.default_rng(100 + t)
        pts = rng.standard_normal((100, 3))
        rot = lie.Rot3.exp(rng.standard_normal(3))
        s = 1.7
        gt = s * pts @ rot.matrix().T + rng.standard_normal(3)
        gt = gt + sigma * rng.standard_normal((100, 3))
        res = metrics.umeyama_align(pts, gt, with_scale=True)
        rmses.append(res.rmse_after)
        scale_errs.append(abs(res.scale - s) / s)
        rot_errs.append(rot.inverse().compose(res.rotation).angle())
    assert abs(np.mean(rmses) - sigma * math.sqrt(3)) < 0.2 * sigma * math.sqrt(3)
    assert max(scale_errs) < 0.01
    assert max(rot_errs) < 0.01


def test_umeyama_apply_reproduces_reported_rmse():
    rng = np.random.default_rng(3)
    est = rng.standard_normal((25, 3))
    gt = 2.0 * est @ lie.Rot3.exp(np.array([0.1, 0.2, 0.3])).matrix().T + 1.0
    gt = gt + 0.05 * rng.standard_normal((25, 3))
    r = metrics.umeyama_align(est, gt, with_scale=True)
    resid = r.apply(est) - gt
    rmse = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    assert abs(rmse - r.rmse_after) < 1e-9


def test_umeyama_degenerate_flag_and_proper_rotation():
    line = np.outer(np.linspace(0.0, 1.0, 10), np.array([1.0, 2.0, 3.0]))
    r = metrics.umeyama_align(line, line + 1.0)
    assert r.degenerate
    assert r.rmse_after < 1e-9
    assert abs(np.linalg.det(r.rotation.matrix()) - 1.0) < 1e-9

    coincident = np.ones((5, 3))
    assert metrics.umeyama_align(coincident, coincident).degenerate


def test_umeyama_hard_preconditions():
    pts = np.zeros((2, 3))
    with pytest.raises(DegenerateInput):
        metrics.umeyama_align(pts, pts)
    with pytest.raises(DegenerateInput):
        metrics.umeyama_align(np.zeros((5, 3)), np.zeros((4, 3)))


def test_ate_identical_and_offset():
    traj = straight_chain()
    assert metrics.ate_rmse(traj, traj, "none") == 0.0
    off = [lie.Pose3(p.t + np.array([1.0, 0, 0]), p.rot) for p in traj]
    assert abs(metrics.ate_rmse(off, traj, "none") - 1.0) < 1e-12
    assert metrics.ate_rmse(off, traj, "se3") < 1e-9


def test_ate_sim3_invariant_under_similarity_warp():
    gt = metrics._points(straight_chain(12))
    rng = np.random.default_rng(4)
    gt = gt + 0.2 * rng.standard_normal(gt.shape)
    base = metrics.ate_rmse(gt, gt, "sim3")
    rot = lie.Rot3.exp(np.array([0.1, 0.2, 0.3])).matrix()
    warped = 3.0 * gt @ rot.T + np.array([5.0, 6.0, 7.0])
    assert abs(metrics.ate_rmse(warped, gt, "sim3") - base) < 1e-9


def test_rpe_identical_and_left_invariance():
    traj = straight_chain()
    assert metrics.rpe(traj, traj) == (0.0, 0.0)
    g = lie.Pose3(np.array([2.0, 1.0, -0.5]),
                  lie.Rot3.from_yaw_pitch_roll(0.7, 0.1, -0.2))
    moved = [g.compose(p) for p in traj]
    tr, rot = metrics.rpe(moved, traj)
    assert tr < 1e-12 and rot < 1e-12


def test_rpe_single_corrupted_step():
    traj = straight_chain(10)
    est = [lie.Pose3(p.t + (np.array([0.0, 0.2, 0.0]) if k >= 4 else 0.0),
                     p.rot) for k, p in enumerate(traj)]
    tr, rot = metrics.rpe(est, traj, delta=1)
    assert abs(tr - 0.2 / 9) < 1e-12
    assert rot < 1e-12


def test_deg_per_meter_unit_case():
    # one degree of yaw error accumulated per one-meter step
    gt = straight_chain(10)
    est, x = [], lie.Pose3.identity()
    for _ in range(10):
        est.append(x)
        x = x.compose(lie.Pose3(
            np.array([1.0, 0, 0]),
            lie.Rot3.from_yaw_pitch_roll(math.radians(1.0), 0, 0)))
    assert abs(metrics.deg_per_meter(est, gt) - 1.0) < 1e-9


def test_drift_percent_endpoint_definition():
    traj = straight_chain(10)
    assert metrics.drift_percent(traj, traj) == 0.0
    est = list(traj[:-1]) + [lie.Pose3(traj[-1].t + np.array([0, 1.0, 0]),
                                       traj[-1].rot)]
    assert abs(metrics.drift_percent(est, traj) - 100.0 / 9.0) < 1e-9


def test_drift_start_alignment_absorbs_global_offset():
    traj = straight_chain(10)
    g = lie.Pose3(np.array([5.0, -3.0, 2.0]),
                  lie.Rot3.from_yaw_pitch_roll(1.1, 0, 0))
    moved = [g.compose(p) for p in traj]
    assert metrics.drift_percent(moved, traj) < 1e-9


def test_drift_matches_hand_computation_from_tum_files():
    rng = np.random.default_rng(5)
    gt, est = [], []
    x = lie.Pose3.identity()
    y = lie.Pose3.identity()
    for k in range(20):
        gt.append(x)
        est.append(y)
        step = lie.Pose3(np.array([1.0, 0.1 * math.sin(k), 0.0]),
                         lie.Rot3.from_yaw_pitch_roll(0.05, 0, 0))
        noise = lie.se3_exp(0.01 * rng.standard_normal(6))
        x = x.compose(step)
        y = y.compose(step.compose(noise))

    def tum_rows(poses):
        rows = []
        for k, p in enumerate(poses):
            w, qx, qy, qz = p.rot.quaternion()
            rows.append([float(k), *p.t, qx, qy, qz, w])
        return np.array(rows)

    gt2 = metrics.poses_from_tum(io.parse_tum(io.write_tum(
        io.TumTrajectory(tum_rows(gt)))))
    est2 = metrics.poses_from_tum(io.parse_tum(io.write_tum(
        io.TumTrajectory(tum_rows(est)))))

    pts = np.array([p.t for p in gt2])
    path = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    fix = gt2[0].compose(est2[0].inverse())
    err = float(np.linalg.norm(fix.compose(est2[-1]).t - gt2[-1].t))
    want = 100.0 * err / path
    assert abs(metrics.drift_percent(est2, gt2) - want) < 1e-9


def test_length_and_path_errors():
    traj = straight_chain(10)
    with pytest.raises(LengthMismatch):
        metrics.ate_rmse(traj[:5], traj)
    with pytest.raises(LengthMismatch):
        metrics.rpe(traj[:3], traj[:3], delta=5)
    with pytest.raises(LengthMismatch):
        metrics.drift_percent(traj[:4], traj)
    still = [lie.Pose3.identity() for _ in range(5)]
    with pytest.raises(ZeroPathLength):
        metrics.drift_percent(still, still)
    with pytest.raises(ValueError):
        metrics.ate_rmse(traj, traj, align="affine")


def test_accepts_planar_poses():
    traj2 = [lie.Pose2(float(k), 0.0, lie.Rot2(0.1 * k)) for k in range(8)]
    assert metrics.ate_rmse(traj2, traj2, "none") == 0.0
    tr, rot = metrics.rpe(traj2, traj2)
    assert tr == 0.0 and rot == 0.0

import math

import numpy as np

from uwpose import graph, lie


def noisy_ring_graph(seed: int, n: int = 5, sigma_t: float = 0.04,
                     sigma_r: float = 0.03, info_scale: float = 50.0):
    """Planar ring of n poses with noisy odometry, one loop closure, anchor.

    Initial values are dead-reckoned from the noisy odometry, so the
    optimizer has actual work to do. Returns (graph, ground_truth_poses).
    """
    rng = np.random.default_rng(seed)
    gt = []
    for k in range(n):
        ang = 2 * math.pi * k / n
        gt.append(lie.Pose2.from_xytheta(math.cos(ang), math.sin(ang), ang + math.pi / 2))
    info = np.eye(3) * info_scale

    def noise():
        v = rng.normal(size=3) * [sigma_t, sigma_t, sigma_r]
        return lie.exp_se2(v)

    measurements = []
    for k in range(n - 1):
        measurements.append(lie.between(gt[k], gt[k + 1]).compose(noise()))
    loop_meas = lie.between(gt[n - 1], gt[0]).compose(noise())

    # dead-reckon initials through the noisy chain
    poses = [gt[0]]
    for k in range(n - 1):
        poses.append(poses[-1].compose(measurements[k]))
    b = graph.GraphBuilder("planar")
    for k in range(n):
        b.add_pose(k, poses[k])
    for k in range(n - 1):
        b.add_odometry(k, k + 1, measurements[k], info)
    b.add_loop_closure(n - 1, 0, loop_meas, info)
    b.add_anchor(0, gt[0], np.eye(3) * 100.0)
    return b.build(), gt

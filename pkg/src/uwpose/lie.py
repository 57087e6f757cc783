"""Rigid-transform types for SO(2)/SE(2)/SO(3)/SE(3).

Conventions used throughout the toolkit:

- SE(2) tangent vectors are numpy arrays ``(dx, dy, dtheta)``; SE(3) tangent
  vectors are ``(rho_x, rho_y, rho_z, phi_x, phi_y, phi_z)`` with translation
  first.
- Perturbations are applied on the right: ``retract(p, v) = p * exp(v)``.
- Euler decomposition is ZYX (yaw about z, then pitch, then roll), the usual
  marine-robotics convention, so yaw extraction is a single atan2.
- ``Rot3`` stores a unit quaternion ``(w, x, y, z)``, renormalized and sign-
  canonicalized (w >= 0) after every operation.

All types are immutable values; every operation is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GimbalLock

# Below this rotation magnitude the closed-form exp/log coefficients switch
# to second-order Taylor expansions (relative error < 1e-12 at the switch).
_SMALL_ANGLE = 1e-6

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    wrapped = math.pi - (math.pi - theta) % _TWO_PI
    if wrapped <= -math.pi:  # guards the rare exact-boundary rounding case
        wrapped += _TWO_PI
    return wrapped


# ---------------------------------------------------------------------------
# Planar types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rot2:
    """Planar rotation, angle wrapped to (-pi, pi]."""

    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @staticmethod
    def identity() -> "Rot2":
        return Rot2(0.0)

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def compose(self, other: "Rot2") -> "Rot2":
        return Rot2(self.theta + other.theta)

    def inverse(self) -> "Rot2":
        return Rot2(-self.theta)

    def rotate(self, v) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


@dataclass(frozen=True)
class Pose2:
    """Planar rigid transform (x, y, rotation)."""

    x: float
    y: float
    rot: Rot2

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, Rot2.identity())

    @staticmethod
    def from_xytheta(x: float, y: float, theta: float) -> "Pose2":
        return Pose2(float(x), float(y), Rot2(theta))

    @property
    def theta(self) -> float:
        return self.rot.theta

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.rot.compose(other.rot),
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            self.rot.inverse(),
        )

    def transform(self, v) -> np.ndarray:
        return self.rot.rotate(v) + self.translation


def _se2_v_coeffs(theta: float) -> tuple[float, float]:
    """Coefficients a, b of the SE(2) V-matrix V = a*I + b*J."""
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0
    return math.sin(theta) / theta, (1.0 - math.cos(theta)) / theta


def _se2_v_coeff_derivs(theta: float) -> tuple[float, float]:
    """d/dtheta of the V-matrix coefficients a, b."""
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        return -theta / 3.0 + theta * t2 / 30.0, 0.5 - t2 / 8.0
    t2 = theta * theta
    da = (theta * math.cos(theta) - math.sin(theta)) / t2
    db = (theta * math.sin(theta) - (1.0 - math.cos(theta))) / t2
    return da, db


def exp_se2(v) -> Pose2:
    """SE(2) exponential: tangent (dx, dy, dtheta) -> Pose2."""
    dx, dy, dtheta = float(v[0]), float(v[1]), float(v[2])
    a, b = _se2_v_coeffs(dtheta)
    return Pose2(a * dx - b * dy, b * dx + a * dy, Rot2(dtheta))


def log_se2(p: Pose2) -> np.ndarray:
    """SE(2) logarithm, inverse of exp_se2 for |dtheta| < pi.

    At theta = pi exactly the principal value is returned.
    """
    theta = p.theta
    a, b = _se2_v_coeffs(theta)
    # V = a*I + b*J  =>  V^-1 = (a*I - b*J) / (a^2 + b^2); the denominator
    # only vanishes at theta = 2*pi, unreachable after wrapping.
    denom = a * a + b * b
    rx = (a * p.x + b * p.y) / denom
    ry = (-b * p.x + a * p.y) / denom
    return np.array([rx, ry, theta])


def retract(p, v):
    """Right retraction p * exp(v); accepts Pose2 (3-vector) or Pose3 (6-vector)."""
    if isinstance(p, Pose2):
        return p.compose(exp_se2(v))
    return p.compose(se3_exp(v))


def between(a, b):
    """Relative transform a^-1 * b; both arguments of the same group."""
    return a.inverse().compose(b)


def adjoint_se2(p: Pose2) -> np.ndarray:
    """Adjoint of a Pose2 on (dx, dy, dtheta) tangents."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.y], [s, c, -p.x], [0.0, 0.0, 1.0]])


def se2_dlog(e: Pose2) -> np.ndarray:
    """Derivative of log_se2 at e w.r.t. a right perturbation of e.

    Equals the inverse right Jacobian of SE(2) evaluated at log(e).
    """
    theta = e.theta
    a, b = _se2_v_coeffs(theta)
    da, db = _se2_v_coeff_derivs(theta)
    c = a * a + b * b
    dc = 2.0 * (a * da + b * db)
    # V^-1 and its theta-derivative, with V^-1 = (a*I - b*J)/c
    vinv = np.array([[a, b], [-b, a]]) / c
    dvinv = (np.array([[da, db], [-db, da]]) * c - np.array([[a, b], [-b, a]]) * dc) / (c * c)
    out = np.zeros((3, 3))
    out[:2, :2] = vinv @ e.rot.matrix()
    out[:2, 2] = dvinv @ e.translation
    out[2, 2] = 1.0
    return out


# ---------------------------------------------------------------------------
# Spatial types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rot3:
    """Spatial rotation as a unit quaternion (w, x, y, z), w >= 0."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n == 0.0:
            raise ValueError("zero quaternion")
        sign = -1.0 if self.w < 0.0 else 1.0
        object.__setattr__(self, "w", sign * self.w / n)
        object.__setattr__(self, "x", sign * self.x / n)
        object.__setattr__(self, "y", sign * self.y / n)
        object.__setattr__(self, "z", sign * self.z / n)

    @staticmethod
    def identity() -> "Rot3":
        return Rot3(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rot3":
        # Shepperd's method: branch on the largest of trace / diagonal entries.
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            return Rot3(0.25 * s, (m[2, 1] - m[1, 2]) / s,
                        (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            return Rot3((m[2, 1] - m[1, 2]) / s, 0.25 * s,
                        (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            return Rot3((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                        0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        return Rot3((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                    (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    @staticmethod
    def from_yaw_pitch_roll(yaw: float, pitch: float, roll: float) -> "Rot3":
        """ZYX composition Rz(yaw) * Ry(pitch) * Rx(roll)."""
        cy, sy = math.cos(yaw / 2.0), math.sin(yaw / 2.0)
        cp, sp = math.cos(pitch / 2.0), math.sin(pitch / 2.0)
        cr, sr = math.cos(roll / 2.0), math.sin(roll / 2.0)
        return Rot3(
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        )

    @staticmethod
    def exp(phi) -> "Rot3":
        """SO(3) exponential of a rotation vector."""
        angle = math.sqrt(float(phi[0]) ** 2 + float(phi[1]) ** 2 + float(phi[2]) ** 2)
        if angle < _SMALL_ANGLE:
            half = 0.5 - angle * angle / 48.0
            w = 1.0 - angle * angle / 8.0
        else:
            half = math.sin(angle / 2.0) / angle
            w = math.cos(angle / 2.0)
        return Rot3(w, half * phi[0], half * phi[1], half * phi[2])

    def log(self) -> np.ndarray:
        """Rotation vector of the principal logarithm, angle in [0, pi]."""
        n = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        if n < 1e-9:
            f = 2.0 / self.w - 2.0 * n * n / (3.0 * self.w**3)
        else:
            f = 2.0 * math.atan2(n, self.w) / n
        return np.array([f * self.x, f * self.y, f * self.z])

    def angle(self) -> float:
        """Geodesic rotation angle in [0, pi]."""
        n = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        return 2.0 * math.atan2(n, abs(self.w))

    def quaternion(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])

    def compose(self, o: "Rot3") -> "Rot3":
        return Rot3(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )

    def inverse(self) -> "Rot3":
        return Rot3(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)


@dataclass(frozen=True, eq=False)
class Pose3:
    """Spatial rigid transform: translation (3,) array plus Rot3."""

    t: np.ndarray
    rot: Rot3

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3).copy())

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.zeros(3), Rot3.identity())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rot.matrix()
        m[:3, 3] = self.t
        return m

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.t + self.rot.rotate(other.t), self.rot.compose(other.rot))

    def inverse(self) -> "Pose3":
        rinv = self.rot.inverse()
        return Pose3(-rinv.rotate(self.t), rinv)

    def transform(self, v) -> np.ndarray:
        return self.rot.rotate(v) + self.t


def skew(v) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_left_jacobian(phi) -> np.ndarray:
    """V matrix: exp((rho, phi)) translation = V(phi) @ rho."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < _SMALL_ANGLE:
        c1 = 0.5 - theta * theta / 24.0
        c2 = 1.0 / 6.0 - theta * theta / 120.0
    else:
        c1 = (1.0 - math.cos(theta)) / (theta * theta)
        c2 = (theta - math.sin(theta)) / (theta**3)
    return np.eye(3) + c1 * k + c2 * (k @ k)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < _SMALL_ANGLE:
        g = 1.0 / 12.0 + theta * theta / 720.0
    else:
        g = 1.0 / (theta * theta) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * k + g * (k @ k)


def se3_exp(xi) -> Pose3:
    """SE(3) exponential of (rho, phi), translation-first."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    return Pose3(so3_left_jacobian(phi) @ rho, Rot3.exp(phi))


def se3_log(p: Pose3) -> np.ndarray:
    """SE(3) logarithm, inverse of se3_exp for rotation angles < pi."""
    phi = p.rot.log()
    rho = so3_left_jacobian_inv(phi) @ p.t
    return np.concatenate([rho, phi])


def adjoint_se3(p: Pose3) -> np.ndarray:
    """Adjoint of a Pose3 on (rho, phi) tangents."""
    r = p.rot.matrix()
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[:3, 3:] = skew(p.t) @ r
    out[3:, 3:] = r
    return out


def _so3_jr_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3): Jl^-1(-phi)."""
    return so3_left_jacobian_inv(-phi)


def _se3_q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Translation-rotation coupling block of the SE(3) left Jacobian."""
    theta = float(np.linalg.norm(phi))
    rx = skew(rho)
    px = skew(phi)
    t2 = theta * theta
    if theta < _SMALL_ANGLE:
        c1 = 1.0 / 6.0 - t2 / 120.0
        c2 = -1.0 / 24.0 + t2 / 720.0
        c3 = -1.0 / 120.0 + t2 / 5040.0
    else:
        c1 = (theta - math.sin(theta)) / (t2 * theta)
        c2 = (1.0 - t2 / 2.0 - math.cos(theta)) / (t2 * t2)
        c3 = (theta - math.sin(theta) - theta * t2 / 6.0) / (t2 * t2 * theta)
    pr = px @ rx
    rp = rx @ px
    prp = pr @ px
    return (
        0.5 * rx
        + c1 * (pr + rp + prp)
        - c2 * (px @ pr + rp @ px - 3.0 * prp)
        - 0.5 * (c2 - 3.0 * c3) * (prp @ px + px @ rp @ px)
    )


def se3_dlog(e: Pose3) -> np.ndarray:
    """Derivative of se3_log at e w.r.t. a right perturbation of e.

    Equals the inverse right Jacobian of SE(3) evaluated at log(e).
    """
    r = se3_log(e)
    rho, phi = r[:3], r[3:]
    a = _so3_jr_inv(phi)
    q = _se3_q_matrix(-rho, -phi)
    out = np.zeros((6, 6))
    out[:3, :3] = a
    out[:3, 3:] = -a @ q @ a
    out[3:, 3:] = a
    return out


# ---------------------------------------------------------------------------
# Planar projection / lifting
# ---------------------------------------------------------------------------

_GIMBAL_TOL = 1e-6


def project_se3_to_se2(p: Pose3) -> tuple[Pose2, float, float, float]:
    """ZYX decomposition: returns (planar pose, roll, pitch, z).

    Together with lift_se2_to_se3 this is an exact round trip away from
    gimbal lock (|pitch| near pi/2).
    """
    m = p.rot.matrix()
    sp = -m[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(abs(pitch) - math.pi / 2.0) < _GIMBAL_TOL:
        raise GimbalLock(f"pitch {pitch:.9f} within tolerance of +-pi/2")
    yaw = math.atan2(m[1, 0], m[0, 0])
    roll = math.atan2(m[2, 1], m[2, 2])
    return Pose2(p.t[0], p.t[1], Rot2(yaw)), roll, pitch, float(p.t[2])


def lift_se2_to_se3(planar: Pose2, roll: float, pitch: float, z: float) -> Pose3:
    """Inverse of project_se3_to_se2 away from gimbal lock."""
    rot = Rot3.from_yaw_pitch_roll(planar.theta, pitch, roll)
    return Pose3(np.array([planar.x, planar.y, z]), rot)

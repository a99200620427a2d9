"""Planar and spatial poses, unit quaternions, and rotation distances.

Quaternions are stored as (w, x, y, z) everywhere, including serialization.
All constructors renormalize, so downstream code can rely on unit norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-6


class NonUnitQuaternionError(ValueError):
    """Raised when an operation requires a unit quaternion and gets one that is not."""


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise NonUnitQuaternionError("zero quaternion cannot be normalized")
    return q / n


def _require_unit(q: np.ndarray, name: str) -> None:
    if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_TOL:
        raise NonUnitQuaternionError(f"{name} is not unit norm: |q|={np.linalg.norm(q):.9f}")


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n == 0.0:
        return quat_identity()
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) / n * axis))


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion (Rodrigues form of q v q*)."""
    w, ux, uy, uz = float(q[0]), float(q[1]), float(q[2]), float(q[3])
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    tx = uy * vz - uz * vy + w * vx
    ty = uz * vx - ux * vz + w * vy
    tz = ux * vy - uy * vx + w * vz
    return np.array([
        vx + 2.0 * (uy * tz - uz * ty),
        vy + 2.0 * (uz * tx - ux * tz),
        vz + 2.0 * (ux * ty - uy * tx),
    ])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_random(rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternion (Shoemake subgroup algorithm)."""
    u1, u2, u3 = rng.uniform(0.0, 1.0, 3)
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    return np.array([
        a * math.sin(2 * math.pi * u2),
        a * math.cos(2 * math.pi * u2),
        b * math.sin(2 * math.pi * u3),
        b * math.cos(2 * math.pi * u3),
    ])


def d_rot(a, b) -> float:
    """Rotational distance 1 - <a, b>^2 between unit quaternions, in [0, 1].

    Symmetric and invariant to negating either argument (double cover).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _require_unit(a, "a")
    _require_unit(b, "b")
    dot = float(np.dot(a, b))
    return max(0.0, 1.0 - dot * dot)


def slerp(a, b, t: float) -> np.ndarray:
    """Spherical interpolation along the shortest arc; t is clamped to [0, 1].

    Falls back to normalized linear interpolation when the inputs are nearly
    identical, which is numerically safer than dividing by sin(theta).
    """
    a = quat_normalize(a)
    b = quat_normalize(b)
    t = min(1.0, max(0.0, float(t)))
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-9:
        return quat_normalize(a + t * (b - a))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    return quat_normalize((math.sin((1.0 - t) * theta) / s) * a + (math.sin(t * theta) / s) * b)


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, theta) with theta kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose2":
        return cls(d["x"], d["y"], d["theta"])


@dataclass(frozen=True)
class Pose3:
    """Spatial pose: position (m) plus unit quaternion (w, x, y, z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "quaternion": self.orientation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose3":
        return cls(np.array(d["position"]), np.array(d["quaternion"]))


def rotate_into_frame(v, frame: Pose2) -> np.ndarray:
    """Rotate a world 3-vector (e.g. a velocity) into the planar frame. No translation."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    v = np.asarray(v, dtype=float)
    return np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]])


def transform_to_frame(p: Pose3, frame: Pose2) -> Pose3:
    """Express a world pose in the coordinates of a planar frame."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    dx, dy = p.position[0] - frame.x, p.position[1] - frame.y
    pos = np.array([c * dx + s * dy, -s * dx + c * dy, p.position[2]])
    q = quat_multiply(quat_from_yaw(-frame.theta), p.orientation)
    return Pose3(pos, q)


def transform_from_frame(p: Pose3, frame: Pose2) -> Pose3:
    """Inverse of :func:`transform_to_frame`."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    x, y = p.position[0], p.position[1]
    pos = np.array([frame.x + c * x - s * y, frame.y + s * x + c * y, p.position[2]])
    q = quat_multiply(quat_from_yaw(frame.theta), p.orientation)
    return Pose3(pos, q)

"""Parametric mobile manipulators: base drive integration, FK, and iterative IK.

The IK solver is damped least squares with a weighted joint metric (weights are
the reciprocals of the maximum joint velocities), so that motion is distributed
toward fast joints and stays close to the previous configuration. Per-joint
steps are hard-clamped to max_velocity * dt, which rules out configuration
jumps by construction.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .geometry import Pose2, Pose3, d_rot, quat_normalize
from .gridmap import World, stamp_dynamics

IK_POS_TOL = 1e-3
IK_ROT_TOL = 1e-3  # d_rot units
IK_DAMPING = 1e-3
IK_MAX_ITERS = 100


class RobotConfigError(ValueError):
    """Raised for malformed robot configuration files."""


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # "revolute" | "prismatic" | "continuous"
    axis: np.ndarray  # unit axis in the parent frame
    offset: np.ndarray  # fixed (x, y, z) translation from the parent frame
    limits: tuple[float, float] | None  # None for continuous joints
    max_velocity: float  # rad/s or m/s

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float).reshape(3))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        n = float(np.linalg.norm(self.axis))
        if n == 0.0:
            raise RobotConfigError(f"joint {self.name}: zero axis")
        object.__setattr__(self, "axis", self.axis / n)
        if self.kind not in ("revolute", "prismatic", "continuous"):
            raise RobotConfigError(f"joint {self.name}: unknown kind {self.kind!r}")
        if self.kind != "continuous":
            if self.limits is None or self.limits[0] >= self.limits[1]:
                raise RobotConfigError(f"joint {self.name}: need min < max limits")
        if self.max_velocity <= 0.0:
            raise RobotConfigError(f"joint {self.name}: max_velocity must be positive")


@dataclass(frozen=True)
class RobotModel:
    name: str
    drive: str  # "omni" | "diff"
    footprint_radius: float
    base_diagonal: float
    arm_reach: float
    joints: tuple[Joint, ...]
    mount_offset: np.ndarray  # arm mount relative to the base frame
    ee_offset: np.ndarray  # tool point relative to the last joint frame
    torso_joint: int | None
    learn_torso: bool
    max_linear_velocity: float
    max_angular_velocity: float
    goal_height_range: tuple[float, float]
    restricted_height_range: tuple[float, float]
    home: tuple[float, ...] = ()

    def __post_init__(self):
        if self.drive not in ("omni", "diff"):
            raise RobotConfigError(f"unknown drive {self.drive!r}")
        object.__setattr__(self, "mount_offset", np.asarray(self.mount_offset, dtype=float).reshape(3))
        object.__setattr__(self, "ee_offset", np.asarray(self.ee_offset, dtype=float).reshape(3))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def base_linear_dim(self) -> int:
        return 2 if self.drive == "omni" else 1

    def max_joint_velocities(self) -> np.ndarray:
        return np.array([j.max_velocity for j in self.joints])

    def clamp_joints(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float)
        for i, j in enumerate(self.joints):
            if j.limits is not None:
                out[i] = min(max(out[i], j.limits[0]), j.limits[1])
        return out

    def sample_joints(self, rng: np.random.Generator) -> np.ndarray:
        vals = np.empty(self.n_joints)
        for i, j in enumerate(self.joints):
            lo, hi = j.limits if j.limits is not None else (-math.pi, math.pi)
            vals[i] = rng.uniform(lo, hi)
        return vals

    def home_joints(self) -> np.ndarray:
        if len(self.home) == self.n_joints:
            return np.array(self.home, dtype=float)
        return self.clamp_joints(np.zeros(self.n_joints))


@dataclass
class JointState:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()

    def copy(self) -> "JointState":
        return JointState(self.values)


@dataclass
class VelocityCommand:
    """Base/torso command, clamped (never rejected) to the model's limits."""

    linear: np.ndarray  # 1 (diff) or 2 (omni) components, base frame, m/s
    angular: float  # rad/s
    torso: float | None = None  # m/s

    def clamped(self, model: RobotModel) -> "VelocityCommand":
        lin = np.asarray(self.linear, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(lin))
        if norm > model.max_linear_velocity:
            lin = lin * (model.max_linear_velocity / norm)
        ang = min(max(self.angular, -model.max_angular_velocity), model.max_angular_velocity)
        torso = self.torso
        if torso is not None and model.torso_joint is not None:
            tmax = model.joints[model.torso_joint].max_velocity
            torso = min(max(torso, -tmax), tmax)
        return VelocityCommand(lin, ang, torso)


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
    ])


def _matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    t = float(np.trace(rot))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (rot[2, 1] - rot[1, 2]) / s,
                      (rot[0, 2] - rot[2, 0]) / s,
                      (rot[1, 0] - rot[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(rot)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1e-12, 1.0 + rot[i, i] - rot[j, j] - rot[k, k])) * 2.0
        q = np.empty(4)
        q[0] = (rot[k, j] - rot[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + k] = (rot[k, i] + rot[i, k]) / s
    return quat_normalize(q)


def _chain_frames(model: RobotModel, base: Pose2, joints: np.ndarray):
    """World rotation/origin of every joint frame plus the tool frame."""
    c, s = math.cos(base.theta), math.sin(base.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pos = np.array([base.x, base.y, 0.0]) + rot @ model.mount_offset
    origins = np.empty((model.n_joints, 3))
    axes = np.empty((model.n_joints, 3))
    for i, (joint, q) in enumerate(zip(model.joints, joints)):
        pos = pos + rot @ joint.offset
        axis_world = rot @ joint.axis
        origins[i] = pos
        axes[i] = axis_world
        if joint.kind == "prismatic":
            pos = pos + axis_world * q
        else:
            rot = rot @ _axis_rotation(joint.axis, q)
    pos = pos + rot @ model.ee_offset
    return rot, pos, origins, axes


def forward_kinematics(model: RobotModel, base: Pose2, joints: JointState | np.ndarray) -> Pose3:
    values = joints.values if isinstance(joints, JointState) else np.asarray(joints, dtype=float)
    if values.shape != (model.n_joints,):
        raise ValueError(f"expected {model.n_joints} joint values, got {values.shape}")
    rot, pos, _, _ = _chain_frames(model, base, values)
    return Pose3(pos, _matrix_to_quat(rot))


def _jacobian(model: RobotModel, base: Pose2, joints: np.ndarray) -> tuple[np.ndarray, Pose3]:
    rot, ee_pos, origins, axes = _chain_frames(model, base, joints)
    z = np.asarray(axes)
    r = ee_pos - np.asarray(origins)
    lin = np.empty_like(z)
    lin[:, 0] = z[:, 1] * r[:, 2] - z[:, 2] * r[:, 1]
    lin[:, 1] = z[:, 2] * r[:, 0] - z[:, 0] * r[:, 2]
    lin[:, 2] = z[:, 0] * r[:, 1] - z[:, 1] * r[:, 0]
    jac = np.zeros((6, model.n_joints))
    prismatic = np.array([j.kind == "prismatic" for j in model.joints])
    jac[:3, prismatic] = z[prismatic].T
    jac[:3, ~prismatic] = lin[~prismatic].T
    jac[3:, ~prismatic] = z[~prismatic].T
    return jac, Pose3(ee_pos, _matrix_to_quat(rot))


def _pose_error(target: Pose3, current: Pose3) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target.position - current.position
    # orientation error as a world-frame rotation vector (shortest arc)
    qc = current.orientation
    qt = target.orientation
    if float(np.dot(qt, qc)) < 0.0:
        qt = -qt
    # vector part of qt * conj(qc), scaled to axis*angle
    w = qt[0] * qc[0] + qt[1] * qc[1] + qt[2] * qc[2] + qt[3] * qc[3]
    v = np.array([
        -qt[0] * qc[1] + qt[1] * qc[0] - qt[2] * qc[3] + qt[3] * qc[2],
        -qt[0] * qc[2] + qt[1] * qc[3] + qt[2] * qc[0] - qt[3] * qc[1],
        -qt[0] * qc[3] - qt[1] * qc[2] + qt[2] * qc[1] + qt[3] * qc[0],
    ])
    sin_half = float(np.linalg.norm(v))
    if sin_half < 1e-12:
        e[3:] = 0.0
        return e
    angle = 2.0 * math.atan2(sin_half, max(w, 0.0))
    e[3:] = v / sin_half * angle
    return e


def solve_ik(model: RobotModel, base_next: Pose2, joints_now: JointState,
             torso_cmd: float | None, target: Pose3, dt: float
             ) -> tuple[JointState, Pose3, bool]:
    """Track a target pose with the arm, staying within one velocity-limited step.

    If ``torso_cmd`` is given, the torso integrates that command and is excluded
    from the solve. Never raises for unreachable targets: returns the clamped
    best effort with ok=False so the caller can grade it via the reward.
    """
    q0 = joints_now.values.copy()
    if q0.shape != (model.n_joints,):
        raise ValueError(f"expected {model.n_joints} joint values, got {q0.shape}")
    vmax = model.max_joint_velocities()
    free = np.ones(model.n_joints, dtype=bool)
    q_start = q0.copy()
    if torso_cmd is not None and model.torso_joint is not None:
        ti = model.torso_joint
        tmax = model.joints[ti].max_velocity
        torso_cmd = min(max(torso_cmd, -tmax), tmax)
        q_start[ti] = q0[ti] + torso_cmd * dt
        free[ti] = False

    lo = q0 - vmax * dt
    hi = q0 + vmax * dt
    for i, joint in enumerate(model.joints):
        if joint.limits is not None:
            lo[i] = max(lo[i], joint.limits[0])
            hi[i] = min(hi[i], joint.limits[1])
    q = np.minimum(np.maximum(q_start, lo), hi)

    damping = IK_DAMPING ** 2 * np.eye(6)

    def descend(q, iters):
        jac, achieved = _jacobian(model, base_next, q)
        err = _pose_error(target, achieved)
        err_norm = float(np.linalg.norm(err))
        used = 0
        while used < iters:
            used += 1
            if err_norm < 1e-10:
                break
            # saturation-aware weighted step: joints that clamp at the box
            # are frozen at the bound, their motion is subtracted from the
            # error budget, and the rest re-solves; otherwise the projected
            # step keeps pointing into the box face and progress dies
            delta = np.zeros(model.n_joints)
            remaining = err
            active = free.copy()
            for _ in range(model.n_joints):
                if not active.any():
                    break
                jf = jac[:, active]
                wa = vmax[active]
                s = wa * (jf.T @ np.linalg.solve((jf * wa) @ jf.T + damping, remaining))
                raw = q[active] + s
                clamped = np.minimum(np.maximum(raw, lo[active]), hi[active])
                delta[active] = clamped - q[active]
                sat_local = np.abs(clamped - raw) > 1e-15
                if not sat_local.any():
                    break
                sat = np.nonzero(active)[0][sat_local]
                remaining = remaining - jac[:, sat] @ delta[sat]
                active[sat] = False
            # backtrack on overshoot: the full Gauss-Newton step is
            # unreliable far from the solution
            improved = False
            for scale in (1.0, 0.5, 0.25, 0.125, 0.0625):
                q_try = np.minimum(np.maximum(q + scale * delta, lo), hi)
                if np.max(np.abs(q_try - q)) < 1e-14:
                    break
                jac_try, achieved_try = _jacobian(model, base_next, q_try)
                err_try = _pose_error(target, achieved_try)
                try_norm = float(np.linalg.norm(err_try))
                if try_norm < err_norm:
                    q, jac, achieved, err = q_try, jac_try, achieved_try, err_try
                    improved = err_norm - try_norm > 1e-14
                    err_norm = try_norm
                    break
            if not improved:
                break  # pinned against the step/position box or converged
        return q, achieved, err_norm, used

    # multi-start within the velocity box: the greedy descent can wedge in a
    # local minimum even when the target is reachable, so retry from seeded
    # random iterates until the budget runs out
    rng = np.random.default_rng(0)
    budget = IK_MAX_ITERS
    q, achieved, err_norm, used = descend(q, budget)
    budget -= used
    best_q, best_achieved, best_norm = q, achieved, err_norm
    while budget > 8 and best_norm > 1e-4:
        q_init = rng.uniform(lo, hi)
        q_init[~free] = q[~free]
        q_r, achieved_r, norm_r, used = descend(q_init, budget)
        budget -= used
        if norm_r < best_norm:
            best_q, best_achieved, best_norm = q_r, achieved_r, norm_r
    q, achieved = best_q, best_achieved
    ok = (float(np.linalg.norm(target.position - achieved.position)) < IK_POS_TOL
          and d_rot(target.orientation, achieved.orientation) < IK_ROT_TOL)
    return JointState(q), achieved, ok


def integrate_base(model: RobotModel, base: Pose2, cmd: VelocityCommand, dt: float) -> Pose2:
    """Integrate a constant twist over dt (exact SE(2) exponential)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cmd = cmd.clamped(model)
    lin = np.asarray(cmd.linear, dtype=float).reshape(-1)
    if model.drive == "diff":
        vx, vy = float(lin[0]), 0.0  # lateral motion is not possible
    else:
        if lin.size == 1:
            vx, vy = float(lin[0]), 0.0
        else:
            vx, vy = float(lin[0]), float(lin[1])
    w = cmd.angular
    if abs(w) < 1e-12:
        dx_b, dy_b = vx * dt, vy * dt
    else:
        sw, cw = math.sin(w * dt), math.cos(w * dt)
        dx_b = (vx * sw - vy * (1.0 - cw)) / w
        dy_b = (vx * (1.0 - cw) + vy * sw) / w
    c, s = math.cos(base.theta), math.sin(base.theta)
    return Pose2(base.x + c * dx_b - s * dy_b,
                 base.y + s * dx_b + c * dy_b,
                 base.theta + w * dt)


def check_base_collision(model: RobotModel, base: Pose2, world: World, dynamics=None) -> bool:
    """True iff any occupied cell center lies inside the base footprint disc."""
    centers = world.obstacle_centers()
    pos = np.array([base.x, base.y])
    if centers.size:
        d2 = np.sum((centers - pos) ** 2, axis=1)
        if float(d2.min()) <= model.footprint_radius ** 2:
            return True
    if dynamics:
        stamped = stamp_dynamics(world.grid, dynamics)
        extra = stamped.heights - world.grid.heights
        iy, ix = np.nonzero(extra > 0.0)
        if iy.size:
            xs, ys = stamped.cell_center(ix, iy)
            d2 = (xs - pos[0]) ** 2 + (ys - pos[1]) ** 2
            if float(d2.min()) <= model.footprint_radius ** 2:
                return True
    return False


def _load_yaml(path_or_name) -> tuple[dict, str]:
    p = Path(path_or_name)
    if p.suffix in (".yaml", ".yml") or p.exists():
        if not p.exists():
            raise RobotConfigError(f"robot config not found: {p}")
        return yaml.safe_load(p.read_text()), str(p)
    res = importlib.resources.files("kinfeas").joinpath(f"configs/{path_or_name}.yaml")
    if not res.is_file():
        raise RobotConfigError(f"robot config not found: {path_or_name}")
    return yaml.safe_load(res.read_text()), str(res)


def load_robot(path_or_name) -> RobotModel:
    """Load a robot model from a YAML file or a built-in config name.

    Built-ins: ``pr2_like``, ``hsr_like``, ``tiago_like``.
    """
    data, source = _load_yaml(path_or_name)
    try:
        joints = tuple(
            Joint(
                name=j["name"],
                kind=j["kind"],
                axis=np.array(j["axis"], dtype=float),
                offset=np.array(j["offset"], dtype=float),
                limits=tuple(j["limits"]) if j.get("limits") is not None else None,
                max_velocity=float(j["max_velocity"]),
            )
            for j in data["joints"]
        )
        constraints = data["constraints"]
        return RobotModel(
            name=data["name"],
            drive=data["drive"],
            footprint_radius=float(data["footprint_radius"]),
            base_diagonal=float(data["base_diagonal"]),
            arm_reach=float(data["arm_reach"]),
            joints=joints,
            mount_offset=np.array(data["mount_offset"], dtype=float),
            ee_offset=np.array(data["ee_offset"], dtype=float),
            torso_joint=data.get("torso_joint"),
            learn_torso=bool(data.get("learn_torso", False)),
            max_linear_velocity=float(constraints["max_linear_velocity"]),
            max_angular_velocity=float(constraints["max_angular_velocity"]),
            goal_height_range=tuple(constraints["goal_height_range"]),
            restricted_height_range=tuple(constraints["restricted_height_range"]),
            home=tuple(data.get("home", ())),
        )
    except (KeyError, TypeError) as exc:
        raise RobotConfigError(f"malformed robot config {source}: {exc}") from exc

"""The control environment: observations, actions, reward, and termination.

One instance owns one episode's mutable state. Each step clamps the action,
advances the desired end-effector motion by the commanded speed, integrates
the base (and torso), solves IK for the arm, and grades the result with the
distance-normalized feasibility reward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from .geometry import Pose2, Pose3, d_rot, rotate_into_frame, transform_to_frame
from .gridmap import LocalMapPair, advance_dynamics, extract_local, stamp_dynamics
from .ee_motion import (EEMotionPlan, MotionParams, MotionQuery, NoPathError,
                        BasePathInfeasibleError, next_velocity, plan_motion, replan,
                        spline_motion)
from .robot import (JointState, RobotModel, VelocityCommand, check_base_collision,
                    forward_kinematics, integrate_base, solve_ik)
from .worldgen import EpisodeSpec

MOTION_KINDS = ("slerp", "fwd", "spline")


class EnvStateError(RuntimeError):
    """Raised when step() is called before reset() or after termination."""


class EpisodeInfeasibleError(RuntimeError):
    """Raised when no end-effector motion can be generated for an episode."""


@dataclass
class EnvConfig:
    dt: float = 0.1  # s (10 Hz control)
    lambda_ik: float = 50.0
    c_rot: float = 2.0
    lambda_vel: float = 0.1
    lambda_acc: float = 0.05
    r_coll: float = -10.0
    v_ee_max: float = 0.2  # m/s, equals the maximum base velocity
    success_pos_tol: float = 0.025  # m
    success_rot_tol: float = 0.05  # d_rot
    deviation_pos_limit: float = 0.10  # m
    deviation_rot_limit: float = 0.05  # d_rot
    violation_budget: int = 20  # steps; terminate when exceeded
    max_steps: int = 3000
    consecutive_violations: bool = True  # False counts cumulatively
    replan_dynamic: bool = True  # rebuild the plan each step when obstacles move
    frame_skip: int = 1  # recorded in logs; not applied to the kinematics

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "EnvConfig":
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data)


@dataclass
class Action:
    """Normalized base/torso commands plus the physical EE speed scalar.

    ``base_linear`` and ``base_angular`` are in [-1, 1] and scale to the
    model's velocity limits; ``ee_speed`` is a_ee in [0, v_ee_max] directly.
    """

    base_linear: np.ndarray
    base_angular: float
    torso: float | None
    ee_speed: float

    def __post_init__(self):
        self.base_linear = np.asarray(self.base_linear, dtype=float).reshape(-1)

    def clamped(self, cfg: EnvConfig) -> "Action":
        lin = np.clip(self.base_linear, -1.0, 1.0)
        ang = float(np.clip(self.base_angular, -1.0, 1.0))
        torso = None if self.torso is None else float(np.clip(self.torso, -1.0, 1.0))
        ee = float(np.clip(self.ee_speed, 0.0, cfg.v_ee_max))
        return Action(lin, ang, torso, ee)

    def flat(self) -> np.ndarray:
        parts = [self.base_linear, [self.base_angular]]
        if self.torso is not None:
            parts.append([self.torso])
        parts.append([self.ee_speed])
        return np.concatenate(parts).astype(float)

    @staticmethod
    def dim(robot: RobotModel) -> int:
        return robot.base_linear_dim + 1 + (1 if robot.learn_torso else 0) + 1

    @classmethod
    def from_flat(cls, vec, robot: RobotModel) -> "Action":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.size != cls.dim(robot):
            raise ValueError(f"expected action of length {cls.dim(robot)}, got {vec.size}")
        k = robot.base_linear_dim
        lin = vec[:k]
        ang = float(vec[k])
        idx = k + 1
        torso = None
        if robot.learn_torso:
            torso = float(vec[idx])
            idx += 1
        return cls(lin, ang, torso, float(vec[idx]))

    @classmethod
    def zero(cls, robot: RobotModel) -> "Action":
        return cls(np.zeros(robot.base_linear_dim), 0.0,
                   0.0 if robot.learn_torso else None, 0.0)


@dataclass
class Observation:
    """Everything the agent sees; all poses are in the robot's base frame."""

    local_maps: LocalMapPair
    joints: np.ndarray
    ee_velocity: np.ndarray  # desired next-step EE velocity, base frame
    desired_pose: Pose3  # desired next EE pose, base frame
    intermediate_goal: Pose3  # plan pose ~1.5 m ahead, base frame
    prev_action: np.ndarray  # zero-filled on the first step

    def layout(self) -> list[dict]:
        entries = []
        offset = 0
        for name, length in [
            ("coarse_map", self.local_maps.coarse.size),
            ("fine_map", self.local_maps.fine.size),
            ("joints", self.joints.size),
            ("ee_velocity", 3),
            ("desired_pose", 7),
            ("goal_pose", 7),
            ("previous_action", self.prev_action.size),
        ]:
            entries.append({"name": name, "offset": offset, "length": int(length)})
            offset += length
        return entries

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.local_maps.coarse.ravel().astype(float),
            self.local_maps.fine.ravel().astype(float),
            self.joints,
            self.ee_velocity,
            self.desired_pose.position, self.desired_pose.orientation,
            self.intermediate_goal.position, self.intermediate_goal.orientation,
            self.prev_action,
        ])


@dataclass
class StepResult:
    observation: Observation
    reward: float
    breakdown: dict
    terminated: bool
    cause: str  # success | deviation | collision-budget | max-steps | none
    bootstrap: bool
    info: dict = field(default_factory=dict)


def compute_reward(cfg: EnvConfig, achieved: Pose3, desired: Pose3,
                   action_vec: np.ndarray, prev_action_vec: np.ndarray,
                   ee_speed: float, collision: bool) -> tuple[float, dict]:
    """Distance-normalized feasibility reward and its breakdown.

    reward = n_vel * (lambda_ik * r_ik + r_coll) + lambda_vel * r_vel
             + lambda_acc * r_acc
    """
    pos_err2 = float(np.sum((desired.position - achieved.position) ** 2))
    rot = d_rot(desired.orientation, achieved.orientation)
    r_ik = -pos_err2 - cfg.c_rot * rot
    r_vel = -((cfg.v_ee_max - ee_speed) ** 2)
    r_acc = -float(np.sum((action_vec - prev_action_vec) ** 2))
    n_vel = ee_speed / cfg.v_ee_max
    r_coll = cfg.r_coll if collision else 0.0
    reward = n_vel * (cfg.lambda_ik * r_ik + r_coll) + cfg.lambda_vel * r_vel \
        + cfg.lambda_acc * r_acc
    return reward, {"r_ik": r_ik, "r_coll": r_coll, "r_vel": r_vel,
                    "r_acc": r_acc, "n_vel": n_vel}


def classify_termination(cfg: EnvConfig, goal_pos_err: float, goal_rot_err: float,
                         violation_count: int, streak_has_collision: bool,
                         collisions_recorded: int, step_index: int) -> tuple[str, bool]:
    """Termination cause and bootstrap flag.

    Success needs the goal tolerance met with a clean collision record and the
    violation budget intact. The bootstrap flag is true for success and
    max-steps (continuing-task semantics) and false for constraint failures.
    """
    in_tolerance = (goal_pos_err <= cfg.success_pos_tol
                    and goal_rot_err <= cfg.success_rot_tol)
    if in_tolerance and collisions_recorded == 0 and violation_count <= cfg.violation_budget:
        return "success", True
    if violation_count > cfg.violation_budget:
        return ("collision-budget" if streak_has_collision else "deviation"), False
    if step_index >= cfg.max_steps:
        return "max-steps", True
    return "none", True


class Env:
    """Single-owner mutable episode state; instances are independent."""

    def __init__(self, robot: RobotModel, cfg: EnvConfig | None = None,
                 motion_params: MotionParams | None = None):
        self.robot = robot
        self.cfg = cfg or EnvConfig()
        self.params = motion_params or MotionParams.for_robot(robot)
        self._spec: EpisodeSpec | None = None
        self._terminated = True

    # -- episode control ----------------------------------------------------

    def reset(self, spec: EpisodeSpec, motion_kind: str = "slerp") -> Observation:
        if motion_kind not in MOTION_KINDS:
            raise ValueError(f"unknown motion kind {motion_kind!r}")
        self._spec = spec
        self._world = spec.world
        self._dynamics = list(spec.world.dynamics)
        self._base = spec.start
        self._joints = JointState(spec.joints)
        ee0 = forward_kinematics(self.robot, self._base, self._joints)
        grid0 = stamp_dynamics(self._world.grid, self._dynamics)
        try:
            if motion_kind == "spline":
                self._plan = spline_motion(ee0, 5, [spec.seed, 7],
                                           height_range=self.robot.goal_height_range,
                                           params=self.params)
            else:
                self._plan = plan_motion(grid0, self._base, ee0, spec.goal,
                                         self.params, profile=motion_kind)
        except (NoPathError, BasePathInfeasibleError) as exc:
            raise EpisodeInfeasibleError(f"motion generation failed: {exc}") from exc
        self._goal = self._plan.goal
        self._motion_kind = motion_kind
        self._s = 0.0
        self._prev_action = np.zeros(Action.dim(self.robot))
        self._step_index = 0
        self._violations = 0
        self._streak_collision = False
        self._collisions_recorded = 0
        self._terminated = False
        return self._observe()

    def step(self, action: Action) -> StepResult:
        if self._spec is None or self._terminated:
            raise EnvStateError("step() requires reset() and a live episode")
        cfg = self.cfg
        a = action.clamped(cfg)
        a_vec = a.flat()

        replan_blocked = None
        if self._dynamics and cfg.replan_dynamic:
            grid_now = stamp_dynamics(self._world.grid, self._dynamics)
            cursor = self._plan.pose_at(self._s)
            new_plan, replan_blocked = replan(self._plan, grid_now, self._base, cursor,
                                              self._goal, self.params)
            if not replan_blocked:
                self._plan = new_plan
                self._s = 0.0

        nx = next_velocity(self._plan,
                           MotionQuery(self._plan.pose_at(self._s),
                                       step_length=a.ee_speed * cfg.dt, dt=cfg.dt),
                           self.params, arc_hint=self._s)
        desired = nx.target

        cmd = VelocityCommand(
            a.base_linear * self.robot.max_linear_velocity,
            a.base_angular * self.robot.max_angular_velocity,
            None if a.torso is None else
            a.torso * self.robot.joints[self.robot.torso_joint].max_velocity,
        )
        base_next = integrate_base(self.robot, self._base, cmd, cfg.dt)
        torso_cmd = cmd.torso if (self.robot.learn_torso and cmd.torso is not None) else None
        joints_next, achieved, ik_ok = solve_ik(self.robot, base_next, self._joints,
                                                torso_cmd, desired, cfg.dt)
        collision = check_base_collision(self.robot, base_next, self._world, self._dynamics)

        reward, breakdown = compute_reward(cfg, achieved, desired, a_vec,
                                           self._prev_action, a.ee_speed, collision)

        dev_pos = float(np.linalg.norm(achieved.position - desired.position))
        dev_rot = d_rot(achieved.orientation, desired.orientation)
        violating = (dev_pos > cfg.deviation_pos_limit
                     or dev_rot > cfg.deviation_rot_limit or collision)
        if violating:
            self._violations += 1
            self._streak_collision = self._streak_collision or collision
        elif cfg.consecutive_violations:
            self._violations = 0
            self._streak_collision = False
        if collision:
            self._collisions_recorded += 1

        self._step_index += 1
        goal_pos_err = float(np.linalg.norm(achieved.position - self._goal.position))
        goal_rot_err = d_rot(achieved.orientation, self._goal.orientation)
        cause, bootstrap = classify_termination(
            cfg, goal_pos_err, goal_rot_err, self._violations,
            self._streak_collision, self._collisions_recorded, self._step_index)
        self._terminated = cause != "none"

        self._base = base_next
        self._joints = joints_next
        self._s = nx.arc_next
        self._prev_action = a_vec
        if self._dynamics:
            self._dynamics = advance_dynamics(self._dynamics, cfg.dt, self._world.bounds)

        obs = self._observe()
        info = {
            "ik_ok": ik_ok,
            "collision": collision,
            "deviation_pos": dev_pos,
            "deviation_rot": dev_rot,
            "goal_pos_err": goal_pos_err,
            "goal_rot_err": goal_rot_err,
            "ee_achieved": achieved,
            "ee_desired": desired,
            "base_pose": base_next,
            "arc": self._s,
            "replan_blocked": replan_blocked,
        }
        return StepResult(obs, reward, breakdown, self._terminated, cause, bootstrap, info)

    # -- helpers -------------------------------------------------------------

    def _observe(self) -> Observation:
        maps = extract_local(self._world.grid, self._dynamics, self._base)
        nominal = next_velocity(self._plan,
                                MotionQuery(self._plan.pose_at(self._s),
                                            step_length=self.cfg.v_ee_max * self.cfg.dt,
                                            dt=self.cfg.dt),
                                self.params, arc_hint=self._s)
        return Observation(
            local_maps=maps,
            joints=self._joints.values.copy(),
            ee_velocity=rotate_into_frame(nominal.velocity, self._base),
            desired_pose=transform_to_frame(nominal.target, self._base),
            intermediate_goal=transform_to_frame(nominal.intermediate_goal, self._base),
            prev_action=self._prev_action.copy(),
        )

    @property
    def plan(self) -> EEMotionPlan:
        return self._plan

    @property
    def goal(self) -> Pose3:
        return self._goal

    @property
    def base_pose(self) -> Pose2:
        return self._base

    @property
    def terminated(self) -> bool:
        return self._terminated


@dataclass
class EpisodeLog:
    """Header plus one record per step; serializes to JSON lines."""

    header: dict
    steps: list[dict]

    @property
    def success(self) -> bool:
        return bool(self.steps) and self.steps[-1]["termination"] == "success"

    @property
    def episode_return(self) -> float:
        return float(sum(s["reward"] for s in self.steps))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"header": self.header}, sort_keys=True)]
        lines += [json.dumps(s, sort_keys=True) for s in self.steps]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path, "r", encoding="utf-8") as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"empty log file: {path}")
        try:
            head = json.loads(lines[0])["header"]
            steps = [json.loads(ln) for ln in lines[1:]]
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"malformed log {path}: {exc}") from exc
        return cls(head, steps)


def run_episode(env: Env, spec: EpisodeSpec, policy, motion_kind: str = "slerp",
                max_steps: int | None = None) -> EpisodeLog:
    """Roll a policy to termination and log every step."""
    obs = env.reset(spec, motion_kind)
    header = {
        "env_config": env.cfg.to_dict(),
        "robot": env.robot.name,
        "motion": motion_kind,
        "seed": spec.seed,
        "episode": spec.to_dict(),
    }
    steps = []
    limit = max_steps if max_steps is not None else env.cfg.max_steps
    for i in range(limit):
        action = policy(obs)
        result = env.step(action)
        info = result.info
        steps.append({
            "step": i,
            "action": action.clamped(env.cfg).flat().tolist(),
            "reward": result.reward,
            "breakdown": result.breakdown,
            "ee_desired": info["ee_desired"].to_dict(),
            "ee_achieved": info["ee_achieved"].to_dict(),
            "base_pose": info["base_pose"].to_dict(),
            "termination": result.cause,
            "bootstrap": result.bootstrap,
            "collision": bool(info["collision"]),
            "ik_ok": bool(info["ik_ok"]),
            "deviation_pos": info["deviation_pos"],
            "deviation_rot": info["deviation_rot"],
        })
        obs = result.observation
        if result.terminated:
            break
    return EpisodeLog(header, steps)

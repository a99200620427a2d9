"""Scripted greedy policy: follow the desired motion at a reach-aware standoff.

Not a reproduction of a learned agent; it closes the loop for integration
tests and the CLI demo, and anchors the empty-world success regression. The
base feeds forward the commanded end-effector velocity and corrects toward a
standoff point beside the motion; the EE speed action slows whenever the
desired pose strays from the reachable ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import Action, EnvConfig, Observation
from .geometry import quat_to_matrix, wrap_angle
from .robot import RobotModel


@dataclass
class GreedyConfig:
    k_linear: float = 3.0  # 1/s, proportional gain on the standoff error
    k_angular: float = 2.0
    k_torso: float = 8.0
    k_recenter: float = 0.9  # base yaw gain recentering the first arm joint
    slow_radius: float = 0.25  # m, stop steering once roughly in place
    align_threshold: float = 0.7  # rad, diff drive rotates in place beyond this
    comfort_band: float = 0.15  # m, tolerated inward gap to the standoff ring
    outward_trigger: float = 0.05  # m, outward drift that starts slowing a_ee
    obstacle_slow_factor: float = 0.6  # a_ee scale when the coarse map is busy
    obstacle_window_cells: int = 6  # half-width of the checked coarse-map block

    def __post_init__(self):
        if min(self.k_linear, self.k_angular, self.k_torso) <= 0.0:
            raise ValueError("gains must be positive")


def _shoulder_base_z(robot: RobotModel) -> float:
    """Height of the first revolute joint origin at zero joint values."""
    z = float(robot.mount_offset[2])
    for joint in robot.joints:
        z += float(joint.offset[2])
        if joint.kind != "prismatic":
            break
    return z


class GreedyPolicy:
    """Callable Observation -> Action for one robot model."""

    def __init__(self, robot: RobotModel, cfg: GreedyConfig | None = None,
                 env_cfg: EnvConfig | None = None):
        self.robot = robot
        self.cfg = cfg or GreedyConfig()
        self.env_cfg = env_cfg or EnvConfig()

    def __call__(self, obs: Observation) -> Action:
        return act(obs, self.cfg, self.robot, self.env_cfg)


def act(obs: Observation, cfg: GreedyConfig, robot: RobotModel,
        env_cfg: EnvConfig | None = None) -> Action:
    env_cfg = env_cfg or EnvConfig()
    desired = obs.desired_pose.position
    inter = obs.intermediate_goal.position
    ahead = inter[:2] - desired[:2]
    ahead_norm = float(np.hypot(ahead[0], ahead[1]))
    desired_norm = float(np.hypot(desired[0], desired[1]))
    near_goal = ahead_norm < 1e-6  # the desired pose has reached the goal

    # stand where the desired pose falls inside the reach annulus: outside the
    # folded-arm inner radius, inside the comfortable outer radius
    shoulder_z = _shoulder_base_z(robot)
    if robot.torso_joint is not None:
        shoulder_z += float(obs.joints[robot.torso_joint])
    dz = float(desired[2]) - shoulder_z
    reach = robot.arm_reach
    outer = math.sqrt(max((0.7 * reach) ** 2 - dz * dz, 0.0))
    inner = math.sqrt(max((0.42 * reach) ** 2 - dz * dz, 0.0)) + 0.12
    standoff = float(np.clip(max(outer, inner), 0.12, 0.75 * reach))

    if near_goal:
        # park at standoff along the line of sight: stable, no side-flipping
        # when the travel direction degenerates
        if desired_norm > 1e-9:
            target = desired[:2] * max(0.0, 1.0 - standoff / desired_norm)
        else:
            target = np.zeros(2)
    else:
        # stand abreast of the desired pose, offset sideways from the travel
        # line, so the motion can pass over the spot the base started on
        travel = ahead / ahead_norm
        normal = np.array([-travel[1], travel[0]])
        side = 1.0 if float(np.dot(-desired[:2], normal)) >= 0.0 else -1.0
        target = desired[:2] + standoff * side * normal
    dist = float(np.hypot(target[0], target[1]))

    # EE speed: full, unless the desired pose strays from the standoff ring
    # (outward drift is the dangerous direction) or obstacles are close by
    ee_speed = env_cfg.v_ee_max
    reach_err = max(desired_norm - standoff - cfg.outward_trigger,
                    standoff - desired_norm - cfg.comfort_band)
    if reach_err > 0.0:
        ee_speed *= float(np.clip(1.0 - 4.0 * reach_err, 0.02, 1.0))
    w = cfg.obstacle_window_cells
    n = obs.local_maps.coarse.shape[0]
    lo, hi = n // 2 - w, n // 2 + w
    if obs.local_maps.coarse[lo:hi, lo:hi].any():
        ee_speed *= cfg.obstacle_slow_factor

    # feed the commanded EE velocity forward so the correction term only has
    # to hold the standoff, not chase the motion
    v_xy = obs.ee_velocity[:2]
    v_norm = float(np.hypot(v_xy[0], v_xy[1]))
    if near_goal or v_norm < 1e-9:
        ff = np.zeros(2)
    else:
        ff = (ee_speed / robot.max_linear_velocity) * (v_xy / v_norm)

    if near_goal:
        # align the base with the tool direction so the wrist stays in range
        axis = quat_to_matrix(obs.desired_pose.orientation)[:, 0]
        if np.hypot(axis[0], axis[1]) > 0.3:
            heading = math.atan2(axis[1], axis[0])
        else:
            heading = math.atan2(desired[1], desired[0]) if desired_norm > 1e-9 else 0.0
    else:
        heading = math.atan2(ahead[1], ahead[0])  # face the direction of travel

    # yaw the base under the arm when the first arm joint nears its limits
    pan = 0.0
    for idx, joint in enumerate(robot.joints):
        if joint.kind != "prismatic":
            pan = float(obs.joints[idx])
            break
    pan_excess = math.copysign(max(abs(pan) - 1.2, 0.0), pan)

    if robot.drive == "omni":
        lin = ff + cfg.k_linear * target
        norm = float(np.hypot(lin[0], lin[1]))
        if norm > 1.0:
            lin = lin / norm
        ang = cfg.k_recenter * pan_excess
        if near_goal or dist > cfg.slow_radius:
            ang += cfg.k_angular * heading
    else:
        to_target = math.atan2(target[1], target[0]) if dist > 1e-9 else heading
        err = wrap_angle(to_target)
        ang = cfg.k_angular * (heading if near_goal or dist < cfg.slow_radius else err)
        if abs(err) > cfg.align_threshold and dist > cfg.slow_radius:
            lin = np.array([0.0])  # rotate in place first
        else:
            mag = min(1.0, float(np.hypot(*ff)) + cfg.k_linear * dist)
            lin = np.array([mag * math.cos(err)])

    torso = None
    if robot.learn_torso:
        # track the intermediate-goal height: the lift is far slower than the
        # arm, so it needs the look-ahead
        torso_now = float(obs.joints[robot.torso_joint])
        torso_target = float(inter[2]) + 0.35 * robot.arm_reach - _shoulder_base_z(robot)
        torso = cfg.k_torso * (torso_target - torso_now)

    return Action(lin, ang, torso, ee_speed).clamped(env_cfg)

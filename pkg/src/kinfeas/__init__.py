"""Kinematic-feasibility simulator for mobile manipulation.

A deterministic, seedable stack: occupancy worlds, an obstacle-aware
end-effector motion generator, parametric mobile manipulators with iterative
IK, and a control environment with a distance-normalized feasibility reward.
"""

from .geometry import Pose2, Pose3, d_rot, slerp, transform_to_frame
from .gridmap import DynamicObstacle, OccupancyGrid, Shape, World, inflate, rasterize
from .ee_motion import (EEMotionPlan, MotionParams, MotionQuery, build_weights,
                        next_velocity, orientation_fwd, plan_motion, plan_path,
                        replan, smooth_and_lift, spline_motion)
from .robot import (JointState, RobotModel, VelocityCommand, check_base_collision,
                    forward_kinematics, integrate_base, load_robot, solve_ik)
from .env import Action, Env, EnvConfig, EpisodeLog, Observation, StepResult, run_episode
from .worldgen import EpisodeSpec, WorldGenConfig, generate_world, make_episode, sample_episode
from .baseline import GreedyConfig, GreedyPolicy

__version__ = "0.1.0"

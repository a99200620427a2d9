"""Procedural task generation: random shape worlds and rejection-sampled episodes.

Obstacles sit on a regular grid with normally distributed positional offsets,
uniform orientation, and uniform extents and heights. Episodes are accepted
only if a path exists between start and goal on a 0.4 m-inflated binary map,
using the same search engine as the motion generator with uniform weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Pose2, Pose3, quat_from_yaw, quat_random
from .gridmap import DynamicObstacle, Shape, World, inflate
from .ee_motion import NoPathError, WeightMap, _astar
from .robot import RobotModel


class UnsolvableWorldError(RuntimeError):
    """Raised when no solvable start/goal pair is found within the attempt budget."""


@dataclass
class WorldGenConfig:
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 8.0, 8.0)
    resolution: float = 0.025
    grid_pitch: float = 1.0  # m between obstacle sites
    offset_std: float = 0.3  # m, normal positional noise per site
    keep_probability: float = 0.6  # chance a site holds an obstacle
    extent_range: tuple[float, float] = (0.2, 1.0)  # m, uniform per axis
    height_range: tuple[float, float] = (0.2, 1.8)  # m, uniform
    goal_distance_range: tuple[float, float] = (0.5, 5.0)  # m from the start
    rejection_radius: float = 0.4  # m, inflation for the solvability check
    max_attempts: int = 100
    n_dynamic: int = 0
    dynamic_speed_range: tuple[float, float] = (0.1, 0.15)  # m/s at spawn
    dynamic_extent_range: tuple[float, float] = (0.3, 0.5)
    dynamic_height: float = 2.0
    goal_height_range: tuple[float, float] | None = None  # default: robot's
    restricted_height_range: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldGenConfig":
        kwargs = {}
        for key, value in d.items():
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)


def generate_world(cfg: WorldGenConfig, seed) -> World:
    """Deterministic random world for a seed; see the module doc for the layout."""
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = cfg.bounds
    shapes = []
    # fixed site iteration order keeps the random stream replayable
    xs = np.arange(xmin + cfg.grid_pitch, xmax - 0.5 * cfg.grid_pitch, cfg.grid_pitch)
    ys = np.arange(ymin + cfg.grid_pitch, ymax - 0.5 * cfg.grid_pitch, cfg.grid_pitch)
    for sy in ys:
        for sx in xs:
            if rng.uniform() >= cfg.keep_probability:
                continue
            kind = "rectangle" if rng.uniform() < 0.5 else "ellipse"
            cx = sx + rng.normal(0.0, cfg.offset_std)
            cy = sy + rng.normal(0.0, cfg.offset_std)
            rot = rng.uniform(0.0, 2.0 * math.pi)
            ex = rng.uniform(*cfg.extent_range)
            ey = rng.uniform(*cfg.extent_range)
            h = rng.uniform(*cfg.height_range)
            shapes.append(Shape(kind, (cx, cy), (ex, ey), rot, h))
    dynamics = _spawn_dynamics(cfg, rng)
    return World(bounds=cfg.bounds, resolution=cfg.resolution, shapes=shapes,
                 dynamics=dynamics)


def _spawn_dynamics(cfg: WorldGenConfig, rng: np.random.Generator) -> list[DynamicObstacle]:
    xmin, ymin, xmax, ymax = cfg.bounds
    out = []
    for _ in range(cfg.n_dynamic):
        pose = Pose2(rng.uniform(xmin, xmax), rng.uniform(ymin, ymax),
                     rng.uniform(-math.pi, math.pi))
        speed = rng.uniform(*cfg.dynamic_speed_range)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        vel = np.array([speed * math.cos(heading), speed * math.sin(heading)])
        ex = rng.uniform(*cfg.dynamic_extent_range)
        ey = rng.uniform(*cfg.dynamic_extent_range)
        kind = "rectangle" if rng.uniform() < 0.5 else "ellipse"
        out.append(DynamicObstacle(kind, (ex, ey), pose, vel, cfg.dynamic_height))
    return out


@dataclass
class EpisodeSpec:
    world: World
    start: Pose2
    joints: np.ndarray
    goal: Pose3
    seed: int

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "start": self.start.to_dict(),
            "joints": self.joints.tolist(),
            "goal": self.goal.to_dict(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        return cls(World.from_dict(d["world"]), Pose2.from_dict(d["start"]),
                   np.array(d["joints"]), Pose3.from_dict(d["goal"]), d["seed"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "EpisodeSpec":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def path_exists(world: World, start_xy, goal_xy, radius: float) -> bool:
    """A*-based existence check on the radius-inflated binary map."""
    blocked = inflate(world.grid, radius)
    wm = WeightMap(np.zeros_like(world.grid.heights), blocked, world.grid)
    # quick component prefilter saves the exhaustive search on unreachable goals
    from scipy import ndimage
    labels, _ = ndimage.label(~blocked, structure=np.ones((3, 3), dtype=int))
    six, siy = wm.cell_of(start_xy)
    gix, giy = wm.cell_of(goal_xy)
    ny, nx = blocked.shape
    if not (0 <= six < nx and 0 <= siy < ny and 0 <= gix < nx and 0 <= giy < ny):
        return False
    if blocked[siy, six] or blocked[giy, gix] or labels[siy, six] != labels[giy, gix]:
        return False
    try:
        _astar(wm.weights, wm.blocked, (six, siy), (gix, giy), scaled=True)
        return True
    except NoPathError:
        return False


def sample_episode(cfg: WorldGenConfig, world: World, robot: RobotModel, seed,
                   restricted_heights: bool = False) -> EpisodeSpec:
    """Rejection-sample a start pose, initial joints, and a reachable goal.

    Raises :class:`UnsolvableWorldError` once the attempt budget is exhausted;
    the caller is expected to regenerate the world.
    """
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = cfg.bounds
    footprint_free = inflate(world.grid, robot.footprint_radius)
    if restricted_heights or (cfg.goal_height_range is None and world.dynamics):
        z_range = cfg.restricted_height_range or robot.restricted_height_range
    else:
        z_range = cfg.goal_height_range or robot.goal_height_range

    for _ in range(cfg.max_attempts):
        start = Pose2(rng.uniform(xmin, xmax), rng.uniform(ymin, ymax),
                      rng.uniform(-math.pi, math.pi))
        six, siy = world.grid.world_to_cell(start.x, start.y)
        if not world.grid.in_bounds(six, siy) or footprint_free[siy, six]:
            continue
        dist = rng.uniform(*cfg.goal_distance_range)
        bearing = rng.uniform(0.0, 2.0 * math.pi)
        gx = start.x + dist * math.cos(bearing)
        gy = start.y + dist * math.sin(bearing)
        if not (xmin <= gx <= xmax and ymin <= gy <= ymax):
            continue
        gz = rng.uniform(*z_range)
        goal = Pose3(np.array([gx, gy, gz]), quat_random(rng))
        if not path_exists(world, (start.x, start.y), (gx, gy), cfg.rejection_radius):
            continue
        joints = robot.sample_joints(rng)
        from .robot import forward_kinematics

        ee0 = forward_kinematics(robot, start, joints)
        eix, eiy = world.grid.world_to_cell(ee0.position[0], ee0.position[1])
        if not world.grid.in_bounds(eix, eiy):
            continue  # arm sticks out of the map; the motion generator needs a cell
        seed_int = int(seed) if np.isscalar(seed) else int(np.asarray(seed).ravel()[0])
        return EpisodeSpec(world, start, joints, goal, seed_int)
    raise UnsolvableWorldError(f"no solvable start/goal found in {cfg.max_attempts} attempts")


def make_episode(cfg: WorldGenConfig, robot: RobotModel, seed: int,
                 max_world_retries: int = 20) -> EpisodeSpec:
    """Generate a world and sample an episode, regenerating unsolvable worlds.

    Fully deterministic in ``seed``: attempt k uses the derived streams
    ``[seed, 2k]`` (world) and ``[seed, 2k+1]`` (episode).
    """
    for k in range(max_world_retries):
        world = generate_world(cfg, [seed, 2 * k])
        try:
            spec = sample_episode(cfg, world, robot, [seed, 2 * k + 1])
            spec.seed = int(seed)
            return spec
        except UnsolvableWorldError:
            continue
    raise UnsolvableWorldError(f"no solvable world after {max_world_retries} regenerations")


def straight_line_episode(robot: RobotModel, seed: int, distance: float = 2.0,
                          bounds: tuple[float, float, float, float] = (0.0, 0.0, 6.0, 6.0),
                          resolution: float = 0.025) -> EpisodeSpec:
    """Empty-world smoke fixture: a goal ``distance`` meters from the start.

    The robot starts from its home configuration. Goal heights come from the
    restricted band (goals at the workspace edges have very low
    maneuverability) and goal orientations are random yaws; arbitrary SO(3)
    goals belong to the random-goal task, not a smoke test.
    """
    rng = np.random.default_rng(seed)
    world = World(bounds=bounds, resolution=resolution, shapes=[])
    cx, cy = 0.5 * (bounds[0] + bounds[2]), 0.5 * (bounds[1] + bounds[3])
    start = Pose2(cx, cy, rng.uniform(-math.pi, math.pi))
    bearing = rng.uniform(0.0, 2.0 * math.pi)
    goal = Pose3(
        np.array([cx + distance * math.cos(bearing), cy + distance * math.sin(bearing),
                  rng.uniform(*robot.restricted_height_range)]),
        quat_from_yaw(rng.uniform(-math.pi, math.pi)),
    )
    return EpisodeSpec(world, start, robot.home_joints(), goal, int(seed))

"""Occupancy/height grids: shape rasterization, inflation, local crops, dynamics.

Grids store one obstacle height per cell (0 = free). Cell membership is decided
by cell-center containment and boundary ties resolve to occupied, which keeps
collision semantics conservative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geometry import Pose2

COARSE_SIDE_M = 3.0
COARSE_RES = 0.1
FINE_SIDE_M = 0.75
FINE_RES = 0.025


class InvalidShapeError(ValueError):
    """Raised for shapes with non-positive extents."""


@dataclass(frozen=True)
class Shape:
    """Rectangle or ellipse footprint with a height.

    ``extents`` are full side lengths (rectangle) or full axis lengths
    (ellipse: semi-axes are extents/2). ``rotation`` is the footprint yaw.
    """

    kind: str  # "rectangle" | "ellipse"
    center: tuple[float, float]
    extents: tuple[float, float]
    rotation: float = 0.0
    height: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse"):
            raise InvalidShapeError(f"unknown shape kind {self.kind!r}")
        if self.extents[0] <= 0.0 or self.extents[1] <= 0.0:
            raise InvalidShapeError(f"non-positive extent {self.extents}")

    def contains(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized point containment test; boundary counts as inside."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        dx = xs - self.center[0]
        dy = ys - self.center[1]
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        hx, hy = 0.5 * self.extents[0], 0.5 * self.extents[1]
        if self.kind == "rectangle":
            return (np.abs(lx) <= hx) & (np.abs(ly) <= hy)
        return (lx / hx) ** 2 + (ly / hy) ** 2 <= 1.0

    def bounding_radius(self) -> float:
        return 0.5 * math.hypot(self.extents[0], self.extents[1])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": list(self.center),
            "extents": list(self.extents),
            "rotation": self.rotation,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Shape":
        return cls(d["kind"], tuple(d["center"]), tuple(d["extents"]), d["rotation"], d["height"])


@dataclass
class DynamicObstacle:
    """Moving obstacle; reflected off the world bounds when it hits them."""

    shape_kind: str
    extents: tuple[float, float]
    pose: Pose2
    velocity: np.ndarray
    height: float

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)

    def as_shape(self) -> Shape:
        return Shape(self.shape_kind, (self.pose.x, self.pose.y), self.extents,
                     self.pose.theta, self.height)

    def to_dict(self) -> dict:
        return {
            "shape_kind": self.shape_kind,
            "extents": list(self.extents),
            "pose": self.pose.to_dict(),
            "velocity": self.velocity.tolist(),
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicObstacle":
        return cls(d["shape_kind"], tuple(d["extents"]), Pose2.from_dict(d["pose"]),
                   np.array(d["velocity"]), d["height"])


@dataclass(frozen=True)
class OccupancyGrid:
    """Axis-aligned height grid. ``heights[iy, ix]`` is the obstacle height."""

    resolution: float
    origin: Pose2  # world pose of cell (0, 0); theta must be 0 for global maps
    heights: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")
        h = np.asarray(self.heights, dtype=float)
        if (h < 0.0).any():
            raise ValueError("heights must be non-negative")
        object.__setattr__(self, "heights", h)

    @property
    def height_cells(self) -> int:
        return self.heights.shape[0]

    @property
    def width_cells(self) -> int:
        return self.heights.shape[1]

    def world_to_cell(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Map world coordinates to (ix, iy) cell indices (may be out of bounds)."""
        ix = np.floor((np.asarray(x) - self.origin.x) / self.resolution).astype(int)
        iy = np.floor((np.asarray(y) - self.origin.y) / self.resolution).astype(int)
        return ix, iy

    def cell_center(self, ix, iy) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin.x + (np.asarray(ix) + 0.5) * self.resolution
        y = self.origin.y + (np.asarray(iy) + 0.5) * self.resolution
        return x, y

    def in_bounds(self, ix, iy) -> np.ndarray:
        return (np.asarray(ix) >= 0) & (np.asarray(ix) < self.width_cells) & \
               (np.asarray(iy) >= 0) & (np.asarray(iy) < self.height_cells)

    def height_at(self, x: float, y: float) -> float:
        """Obstacle height at a world point; out-of-bounds reads as free."""
        ix, iy = self.world_to_cell(x, y)
        if not self.in_bounds(ix, iy):
            return 0.0
        return float(self.heights[iy, ix])

    def occupied_mask(self, height_threshold: float = 0.0) -> np.ndarray:
        """Binary occupancy; threshold 0 means every obstacle counts."""
        if height_threshold <= 0.0:
            return self.heights > 0.0
        return self.heights >= height_threshold


def rasterize(shapes, resolution: float, bounds) -> OccupancyGrid:
    """Rasterize placed shapes onto a fresh grid covering ``bounds``.

    ``bounds`` is (xmin, ymin, xmax, ymax). A cell's height is the max height
    of the shapes covering its center.
    """
    xmin, ymin, xmax, ymax = bounds
    nx = max(1, int(round((xmax - xmin) / resolution)))
    ny = max(1, int(round((ymax - ymin) / resolution)))
    grid = OccupancyGrid(resolution, Pose2(xmin, ymin, 0.0), np.zeros((ny, nx)))
    for shape in shapes:
        stamp_shape(grid, shape)
    return grid


def stamp_shape(grid: OccupancyGrid, shape: Shape) -> None:
    """Max-combine one shape into ``grid.heights`` (cells outside are clipped)."""
    r = shape.bounding_radius()
    ix0, iy0 = grid.world_to_cell(shape.center[0] - r, shape.center[1] - r)
    ix1, iy1 = grid.world_to_cell(shape.center[0] + r, shape.center[1] + r)
    ix0, iy0 = max(int(ix0), 0), max(int(iy0), 0)
    ix1, iy1 = min(int(ix1), grid.width_cells - 1), min(int(iy1), grid.height_cells - 1)
    if ix0 > ix1 or iy0 > iy1:
        return
    ixs, iys = np.meshgrid(np.arange(ix0, ix1 + 1), np.arange(iy0, iy1 + 1))
    xs, ys = grid.cell_center(ixs, iys)
    inside = shape.contains(xs, ys)
    block = grid.heights[iy0:iy1 + 1, ix0:ix1 + 1]
    np.maximum(block, np.where(inside, shape.height, 0.0), out=block)


def inflate(grid: OccupancyGrid, radius: float, height_threshold: float = 0.0) -> np.ndarray:
    """Exact Euclidean inflation of the thresholded occupancy.

    A cell is marked iff the distance from its center to the nearest cell
    center with height >= threshold is <= radius (ties occupied).
    """
    if radius < 0.0:
        raise ValueError("radius must be non-negative")
    occupied = grid.occupied_mask(height_threshold)
    return inflate_mask(occupied, radius, grid.resolution)


def inflate_mask(occupied: np.ndarray, radius: float, resolution: float) -> np.ndarray:
    """Inflate an arbitrary binary mask by a metric radius (exact Euclidean)."""
    if not occupied.any():
        return np.zeros_like(occupied, dtype=bool)
    dist_cells = ndimage.distance_transform_edt(~occupied)
    return dist_cells * resolution <= radius


@dataclass(frozen=True)
class LocalMapPair:
    """Binary base-centric crops: coarse 3.0 m @ 0.1 m, fine 0.75 m @ 0.025 m."""

    coarse: np.ndarray
    fine: np.ndarray

    def __post_init__(self):
        if self.coarse.shape != (30, 30) or self.fine.shape != (30, 30):
            raise ValueError("local map crops must be 30x30")


def _crop(grid: OccupancyGrid, base: Pose2, side: float, resolution: float) -> np.ndarray:
    n = int(round(side / resolution))
    offs = (np.arange(n) - (n - 1) / 2.0) * resolution
    fx, fy = np.meshgrid(offs, offs)  # crop-frame coordinates, x forward
    c, s = math.cos(base.theta), math.sin(base.theta)
    wx = base.x + c * fx - s * fy
    wy = base.y + s * fx + c * fy
    ix, iy = grid.world_to_cell(wx, wy)
    inb = grid.in_bounds(ix, iy)
    out = np.ones((n, n), dtype=bool)  # outside the global map counts occupied
    out[inb] = grid.heights[iy[inb], ix[inb]] > 0.0
    return out


def stamp_dynamics(grid: OccupancyGrid, dynamics) -> OccupancyGrid:
    """Grid with the dynamic obstacles rasterized at their current poses."""
    if not dynamics:
        return grid
    stamped = replace(grid, heights=grid.heights.copy())
    for dyn in dynamics:
        stamp_shape(stamped, dyn.as_shape())
    return stamped


def extract_local(grid: OccupancyGrid, dynamics, base: Pose2) -> LocalMapPair:
    """Binary local crops centered and oriented on the base pose."""
    stamped = stamp_dynamics(grid, dynamics)
    return LocalMapPair(
        coarse=_crop(stamped, base, COARSE_SIDE_M, COARSE_RES),
        fine=_crop(stamped, base, FINE_SIDE_M, FINE_RES),
    )


def advance_dynamics(dynamics, dt: float, bounds) -> list[DynamicObstacle]:
    """Euler-step the dynamic obstacles, reflecting velocities off the bounds."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    xmin, ymin, xmax, ymax = bounds
    out = []
    for dyn in dynamics:
        x = dyn.pose.x + dyn.velocity[0] * dt
        y = dyn.pose.y + dyn.velocity[1] * dt
        vx, vy = float(dyn.velocity[0]), float(dyn.velocity[1])
        if x < xmin:
            x, vx = 2.0 * xmin - x, -vx
        elif x > xmax:
            x, vx = 2.0 * xmax - x, -vx
        if y < ymin:
            y, vy = 2.0 * ymin - y, -vy
        elif y > ymax:
            y, vy = 2.0 * ymax - y, -vy
        out.append(DynamicObstacle(dyn.shape_kind, dyn.extents,
                                   Pose2(x, y, dyn.pose.theta),
                                   np.array([vx, vy]), dyn.height))
    return out


@dataclass
class World:
    """A rasterized world plus the shape list it came from (for lossless IO)."""

    bounds: tuple[float, float, float, float]
    resolution: float
    shapes: list[Shape]
    dynamics: list[DynamicObstacle] = field(default_factory=list)
    grid: OccupancyGrid = None

    def __post_init__(self):
        if self.grid is None:
            self.grid = rasterize(self.shapes, self.resolution, self.bounds)
        self._obstacle_centers = None

    def obstacle_centers(self) -> np.ndarray:
        """Cached (N, 2) world centers of all statically occupied cells."""
        if self._obstacle_centers is None:
            iy, ix = np.nonzero(self.grid.heights > 0.0)
            xs, ys = self.grid.cell_center(ix, iy)
            self._obstacle_centers = np.column_stack([xs, ys])
        return self._obstacle_centers

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "resolution": self.resolution,
            "shapes": [s.to_dict() for s in self.shapes],
            "dynamic_obstacles": [d.to_dict() for d in self.dynamics],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        return cls(
            bounds=tuple(d["bounds"]),
            resolution=d["resolution"],
            shapes=[Shape.from_dict(s) for s in d["shapes"]],
            dynamics=[DynamicObstacle.from_dict(x) for x in d["dynamic_obstacles"]],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "World":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

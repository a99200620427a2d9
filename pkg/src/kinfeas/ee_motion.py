"""Obstacle-aware end-effector motion generation.

Pipeline: a weight map built from two inflation terms (stay clear of tall
obstacles, stay near the base corridor), a weighted 8-connected A* search,
first-order smoothing of the dense waypoints, a height profile that lifts the
path over low obstacles, and orientation profiles (slerp / facing-forward /
spline). Plans answer next-step velocity queries and can be rebuilt per step
when the scene moves.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose2, Pose3, quat_from_yaw, quat_random, slerp)
from .gridmap import OccupancyGrid, inflate, inflate_mask

SQRT2 = math.sqrt(2.0)
# Slight deflation keeps the octile heuristic below any float-accumulated
# path cost, so the search returns exactly the Dijkstra-optimal cost.
HEURISTIC_DEFLATION = 1.0 - 1e-9


class NoPathError(RuntimeError):
    """Raised when no traversable path exists between the query cells."""


class BasePathInfeasibleError(RuntimeError):
    """Raised when no base path exists on the footprint-inflated map."""


class OffPlanError(RuntimeError):
    """Raised when a motion query lies beyond the plan's tracking tolerance."""


@dataclass
class MotionParams:
    """Tunables of the motion generator; defaults follow the shipped configs."""

    d_ee: float = 0.15  # soft clearance of the EE from tall obstacles
    d_base: float = 0.9  # max deviation of the EE from the base corridor
    max_z: float = 1.5  # obstacles at least this tall cannot be passed over
    base_radius: float = 0.33  # base footprint inflation for the corridor path
    collision_margin: float = 0.0  # hard-block radius around tall obstacles
    height_margin: float = 0.05  # extra clearance when lifting over obstacles
    cost_constant: float = 10.0  # c: weight unit in multiples of the move cost
    weight_scaled_by_move: bool = True  # scale cell weights by entered move length
    smoothing_gain: float = 5.0  # 1/s, first-order attractor gain
    nominal_speed: float = 0.2  # m/s, pace of the virtual smoothing target
    sample_ds: float = 0.01  # m, plan sample spacing
    lookahead: float = 1.5  # m, intermediate-goal distance along the plan
    fwd_blend_window: float = 0.3  # m of remaining arc blended toward goal
    tracking_tolerance: float = 0.5  # m, query distance beyond which we are off-plan

    @classmethod
    def for_robot(cls, robot) -> "MotionParams":
        return cls(
            d_base=robot.arm_reach,
            base_radius=robot.footprint_radius,
            max_z=robot.goal_height_range[1] - 0.05,
        )


@dataclass
class WeightMap:
    """Per-cell A* weights plus the cells the search may not enter."""

    weights: np.ndarray
    blocked: np.ndarray
    grid: OccupancyGrid  # geometry reference (resolution / origin)
    base_path_cells: np.ndarray | None = None  # (K, 2) [ix, iy] of the base path

    def cell_of(self, xy) -> tuple[int, int]:
        ix, iy = self.grid.world_to_cell(xy[0], xy[1])
        return int(ix), int(iy)


def _astar(weights: np.ndarray, blocked: np.ndarray, start: tuple[int, int],
           goal: tuple[int, int], scaled: bool) -> tuple[list[tuple[int, int]], float]:
    """Weighted 8-connected A* over cell indices (ix, iy).

    Ties break on (f, g, flat index) for cross-platform determinism. Closed
    nodes are reopened if a cheaper route appears, so the returned cost is
    exactly the Dijkstra optimum of the same float-valued graph.
    """
    ny, nx = weights.shape
    sx, sy = start
    gx, gy = goal
    if not (0 <= sx < nx and 0 <= sy < ny and 0 <= gx < nx and 0 <= gy < ny):
        raise NoPathError("start or goal outside the map")
    if blocked[sy, sx] or blocked[gy, gx]:
        raise NoPathError("start or goal cell is not traversable")

    flat_w = weights.ravel()
    flat_blocked = blocked.ravel()
    start_i = sy * nx + sx
    goal_i = gy * nx + gx
    moves = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]

    g = np.full(nx * ny, np.inf)
    parent = np.full(nx * ny, -1, dtype=np.int64)
    g[start_i] = 0.0

    def h(ix: int, iy: int) -> float:
        dx, dy = abs(ix - gx), abs(iy - gy)
        return (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)) * HEURISTIC_DEFLATION

    heap = [(h(sx, sy), 0.0, start_i)]
    while heap:
        f, gu, u = heapq.heappop(heap)
        if gu > g[u]:
            continue  # stale entry
        if u == goal_i:
            break
        uy, ux = divmod(u, nx)
        for dx, dy, step in moves:
            vx, vy = ux + dx, uy + dy
            if not (0 <= vx < nx and 0 <= vy < ny):
                continue
            v = vy * nx + vx
            if flat_blocked[v]:
                continue
            cost = step * (1.0 + flat_w[v]) if scaled else step + flat_w[v]
            gv = gu + cost
            if gv < g[v]:
                g[v] = gv
                parent[v] = u
                heapq.heappush(heap, (gv + h(vx, vy), gv, v))
    if not np.isfinite(g[goal_i]):
        raise NoPathError("goal unreachable")

    cells = []
    node = goal_i
    while node != -1:
        cy, cx = divmod(node, nx)
        cells.append((cx, cy))
        node = parent[node]
    cells.reverse()
    return cells, float(g[goal_i])


def plan_path(wm: WeightMap, start_xy, goal_xy) -> np.ndarray:
    """Minimum-cost dense 2D waypoints (world meters) between two points."""
    cells, _ = _astar(wm.weights, wm.blocked, wm.cell_of(start_xy), wm.cell_of(goal_xy),
                      scaled=True)
    ix = np.array([c[0] for c in cells])
    iy = np.array([c[1] for c in cells])
    xs, ys = wm.grid.cell_center(ix, iy)
    return np.column_stack([xs, ys])


def plan_path_cost(wm: WeightMap, start_xy, goal_xy, scaled: bool = True) -> float:
    """Total path cost only (used by the search/oracle equivalence checks)."""
    _, cost = _astar(wm.weights, wm.blocked, wm.cell_of(start_xy), wm.cell_of(goal_xy),
                     scaled=scaled)
    return cost


def build_weights(grid: OccupancyGrid, base_start: Pose2, goal: Pose3,
                  params: MotionParams) -> WeightMap:
    """Weight construction: tall-obstacle inflation plus inverse base corridor.

    w = c * [inflate(tall, d_ee) + (1 - inflate(base_path, d_base))], where the
    base path is the shortest footprint-inflated path from the base start to
    the goal. Cells within ``collision_margin`` of a tall obstacle are
    hard-blocked for the search.
    """
    base_blocked = inflate(grid, params.base_radius)
    uniform = WeightMap(np.zeros_like(grid.heights), base_blocked, grid)
    try:
        base_cells, _ = _astar(uniform.weights, uniform.blocked,
                               uniform.cell_of((base_start.x, base_start.y)),
                               uniform.cell_of(goal.position[:2]), scaled=True)
    except NoPathError as exc:
        raise BasePathInfeasibleError(str(exc)) from exc

    path_mask = np.zeros_like(base_blocked)
    cell_arr = np.array(base_cells)
    path_mask[cell_arr[:, 1], cell_arr[:, 0]] = True
    corridor = inflate_mask(path_mask, params.d_base, grid.resolution)

    tall_inflated = inflate(grid, params.d_ee, params.max_z)
    weights = params.cost_constant * (tall_inflated.astype(float) + (1.0 - corridor.astype(float)))
    blocked = inflate(grid, params.collision_margin, params.max_z)
    return WeightMap(weights, blocked, grid, base_path_cells=cell_arr)


@dataclass
class EEMotionPlan:
    """Dense, time-free end-effector poses with cumulative arc length."""

    positions: np.ndarray  # (N, 3)
    quaternions: np.ndarray  # (N, 4), unit, (w, x, y, z)
    arc: np.ndarray  # (N,), cumulative meters, arc[0] == 0
    profile: str  # "slerp" | "fwd" | "spline"
    goal: Pose3

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def pose_at(self, s: float) -> Pose3:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.arc, s, side="right")) - 1
        i = min(max(i, 0), len(self.arc) - 2) if len(self.arc) > 1 else 0
        if len(self.arc) == 1:
            return Pose3(self.positions[0], self.quaternions[0])
        span = self.arc[i + 1] - self.arc[i]
        t = 0.0 if span <= 0.0 else (s - self.arc[i]) / span
        pos = self.positions[i] + t * (self.positions[i + 1] - self.positions[i])
        q = self.quaternions[i] if t == 0.0 else slerp(self.quaternions[i], self.quaternions[i + 1], t)
        return Pose3(pos, q)

    def position_at(self, s: float) -> np.ndarray:
        return self.pose_at(s).position

    def arc_of_closest(self, point) -> tuple[float, float]:
        """Continuous arc position of the closest point on the plan polyline."""
        p = np.asarray(point, dtype=float).reshape(3)
        d2 = np.sum((self.positions - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        best_s, best_d2 = float(self.arc[i]), float(d2[i])
        for j in (i - 1, i):  # project onto the segments adjacent to i
            if 0 <= j < len(self.arc) - 1:
                a, b = self.positions[j], self.positions[j + 1]
                ab = b - a
                denom = float(np.dot(ab, ab))
                if denom <= 0.0:
                    continue
                t = min(1.0, max(0.0, float(np.dot(p - a, ab)) / denom))
                proj = a + t * ab
                dd = float(np.sum((p - proj) ** 2))
                if dd < best_d2:
                    best_d2 = dd
                    best_s = float(self.arc[j] + t * (self.arc[j + 1] - self.arc[j]))
        return best_s, math.sqrt(best_d2)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"arc_length": float(a), "position": p.tolist(),
                             "quaternion": q.tolist()}, sort_keys=True)
                 for a, p, q in zip(self.arc, self.positions, self.quaternions)]
        return "\n".join(lines) + "\n"

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - points[keep[-1]]) > 1e-12:
            keep.append(i)
    return points[keep]


def _resample_polyline(points: np.ndarray, ds: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform arc-length resampling; keeps exact endpoints."""
    points = _dedupe(points)
    if len(points) == 1:
        return points.copy(), np.zeros(1)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    n = max(2, int(math.ceil(total / ds)) + 1)
    s_new = np.linspace(0.0, total, n)
    out = np.column_stack([np.interp(s_new, cum, points[:, k]) for k in range(points.shape[1])])
    out[0] = points[0]
    out[-1] = points[-1]
    return out, s_new


def _first_order_smooth(polyline: np.ndarray, params: MotionParams) -> np.ndarray:
    """Trace of a first-order attractor chasing a target that walks the polyline."""
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    ds = params.sample_ds
    alpha = min(1.0, params.smoothing_gain * ds / params.nominal_speed)
    if total <= 0.0:
        return polyline[:1].copy()
    n = int(math.ceil(total / ds))
    svals = np.minimum((np.arange(1, n + 1)) * ds, total)
    targets = np.column_stack([np.interp(svals, cum, polyline[:, k]) for k in range(2)])
    trace = np.empty((n + 1, 2))
    trace[0] = polyline[0]
    p = polyline[0].copy()
    for i in range(n):
        p = p + alpha * (targets[i] - p)
        trace[i + 1] = p
    # settle onto the endpoint, then pin it exactly
    end = polyline[-1]
    extra = []
    for _ in range(200):
        if np.linalg.norm(p - end) <= 1e-3:
            break
        p = p + alpha * (end - p)
        extra.append(p.copy())
    if extra:
        trace = np.vstack([trace, extra])
    return np.vstack([trace, end])


def _project_off_blocked(samples: np.ndarray, raw: np.ndarray, blocked: np.ndarray,
                         grid: OccupancyGrid) -> np.ndarray:
    """Snap any smoothed sample that cut into a blocked cell back to the raw path."""
    ix, iy = grid.world_to_cell(samples[:, 0], samples[:, 1])
    inb = grid.in_bounds(ix, iy)
    bad = np.zeros(len(samples), dtype=bool)
    bad[inb] = blocked[iy[inb], ix[inb]]
    if not bad.any():
        return samples
    out = samples.copy()
    for i in np.nonzero(bad)[0]:
        d2 = np.sum((raw - samples[i]) ** 2, axis=1)
        out[i] = raw[int(np.argmin(d2))]
    return out


def _lift_heights(xy: np.ndarray, s: np.ndarray, z0: float, z1: float,
                  grid: OccupancyGrid, margin: float) -> np.ndarray:
    """Piecewise-linear z profile clearing every obstacle under the path."""
    ix, iy = grid.world_to_cell(xy[:, 0], xy[:, 1])
    inb = grid.in_bounds(ix, iy)
    h = np.zeros(len(xy))
    h[inb] = grid.heights[iy[inb], ix[inb]]
    req = np.where(h > 0.0, h + margin, -np.inf)

    # knot ramps: rise to clear each upcoming obstacle run, end at the goal z
    z = np.empty(len(xy))
    knot_s, knot_z = s[0], z0
    i = 0
    n = len(xy)
    while i < n:
        if req[i] == -np.inf:
            i += 1
            continue
        j = i
        while j + 1 < n and req[j + 1] != -np.inf:
            j += 1
        run_req = float(req[i:j + 1].max())
        target = max(run_req, z1)
        span = s[i] - knot_s
        sel = (s >= knot_s) & (s <= s[i])
        z[sel] = knot_z if span <= 0.0 else knot_z + (np.clip((s[sel] - knot_s) / span, 0, 1)) * (target - knot_z)
        sel_run = (s >= s[i]) & (s <= s[j])
        z[sel_run] = target
        knot_s, knot_z = s[j], target
        i = j + 1
    span = s[-1] - knot_s
    sel = s >= knot_s
    z[sel] = knot_z if span <= 0.0 else knot_z + np.clip((s[sel] - knot_s) / span, 0, 1) * (z1 - knot_z)
    z = np.maximum(z, np.where(np.isfinite(req), req, -np.inf))
    z[0] = z0
    z[-1] = z1
    return z


def smooth_and_lift(waypoints_xy: np.ndarray, start_pose: Pose3, goal: Pose3,
                    grid: OccupancyGrid, params: MotionParams,
                    blocked: np.ndarray | None = None) -> EEMotionPlan:
    """Turn raw planar waypoints into a dense SE(3) plan.

    Positions are smoothed by a first-order attractor and resampled at uniform
    arc length; z rises to clear each obstacle under the path by
    ``height_margin`` and ends at the goal z; orientations slerp from start to
    goal parameterized by normalized arc length.
    """
    if len(waypoints_xy) == 0:
        raise ValueError("waypoints must be non-empty")
    raw = _dedupe(np.vstack([start_pose.position[:2], waypoints_xy, goal.position[:2]]))
    if len(raw) == 1:
        raw = np.vstack([raw, raw[0] + 1e-9])
    smooth = _first_order_smooth(raw, params)
    if blocked is not None and blocked.any():
        smooth = _project_off_blocked(smooth, raw, blocked, grid)
    xy, s_xy = _resample_polyline(smooth, params.sample_ds)
    z = _lift_heights(xy, s_xy, float(start_pose.position[2]), float(goal.position[2]),
                      grid, params.height_margin)
    pts = np.column_stack([xy, z])
    pts3, arc = _resample_polyline(pts, params.sample_ds)
    # the final resample interpolates across clamp corners; re-apply the
    # clearance floor at the resampled xy positions
    ix2, iy2 = grid.world_to_cell(pts3[:, 0], pts3[:, 1])
    inb2 = grid.in_bounds(ix2, iy2)
    h2 = np.zeros(len(pts3))
    h2[inb2] = grid.heights[iy2[inb2], ix2[inb2]]
    pts3[:, 2] = np.where(h2 > 0.0, np.maximum(pts3[:, 2], h2 + params.height_margin),
                          pts3[:, 2])
    pts3[0] = start_pose.position
    pts3[-1] = goal.position
    total = max(arc[-1], 1e-12)
    quats = np.array([slerp(start_pose.orientation, goal.orientation, a / total) for a in arc])
    quats[0] = start_pose.orientation
    quats[-1] = goal.orientation
    return EEMotionPlan(pts3, quats, arc, "slerp", goal)


def orientation_fwd(plan: EEMotionPlan, blend_window: float | None = None) -> EEMotionPlan:
    """Reorient a slerp plan to face the direction of movement.

    Inside the terminal window the orientation blends (slerp) into the goal
    orientation so the final pose matches the goal exactly.
    """
    if plan.profile != "slerp":
        raise ValueError("orientation_fwd expects a slerp-profile plan")
    window = 0.3 if blend_window is None else blend_window
    n = len(plan.positions)
    quats = np.empty_like(plan.quaternions)
    yaw_prev = None
    for i in range(n):
        j0, j1 = max(0, i - 1), min(n - 1, i + 1)
        d = plan.positions[j1][:2] - plan.positions[j0][:2]
        if np.linalg.norm(d) < 1e-12:
            yaw = yaw_prev if yaw_prev is not None else 0.0
        else:
            yaw = math.atan2(d[1], d[0])
        yaw_prev = yaw
        quats[i] = quat_from_yaw(yaw)
    remaining = plan.length - plan.arc
    if plan.length > 0.0 and window > 0.0:
        for i in range(n):
            if remaining[i] <= window:
                t = 1.0 - remaining[i] / window
                quats[i] = slerp(quats[i], plan.goal.orientation, t)
    quats[-1] = plan.goal.orientation
    return EEMotionPlan(plan.positions.copy(), quats, plan.arc.copy(), "fwd", plan.goal)


def spline_motion(start_pose: Pose3, n_waypoints: int, seed,
                  height_range: tuple[float, float] = (0.2, 1.5),
                  params: MotionParams | None = None) -> EEMotionPlan:
    """Random C1 cubic-spline motion through seeded SE(3) waypoints.

    Consecutive waypoints are 1 m to 3 m apart; waypoint heights are clamped
    to the given range; orientations are piecewise slerp between waypoint
    orientations.
    """
    from scipy.interpolate import CubicSpline

    if n_waypoints < 2:
        raise ValueError("need at least two waypoints")
    params = params or MotionParams()
    rng = np.random.default_rng(seed)
    pts = [np.asarray(start_pose.position, dtype=float)]
    quats = [np.asarray(start_pose.orientation, dtype=float)]
    for _ in range(n_waypoints - 1):
        d = rng.uniform(1.0, 3.0)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        z_next = rng.uniform(*height_range)
        dz = z_next - pts[-1][2]
        xy_dist = math.sqrt(max(d * d - dz * dz, 0.25))
        nxt = pts[-1] + np.array([xy_dist * math.cos(phi), xy_dist * math.sin(phi), dz])
        pts.append(nxt)
        quats.append(quat_random(rng))
    pts = np.array(pts)

    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(chord)])
    spline = CubicSpline(u, pts, axis=0, bc_type="natural")
    dense_u = np.linspace(0.0, u[-1], max(4, int(u[-1] / (0.25 * params.sample_ds))))
    dense = spline(dense_u)
    pts3, arc = _resample_polyline(dense, params.sample_ds)
    pts3[0] = pts[0]
    pts3[-1] = pts[-1]

    # piecewise slerp, parameterized by arc position of each waypoint on the plan
    wp_arc = np.empty(len(pts))
    for k in range(len(pts)):
        d2 = np.sum((pts3 - pts[k]) ** 2, axis=1)
        wp_arc[k] = arc[int(np.argmin(d2))]
    wp_arc[0], wp_arc[-1] = 0.0, arc[-1]
    qs = np.empty((len(pts3), 4))
    for i, a in enumerate(arc):
        k = min(int(np.searchsorted(wp_arc, a, side="right")) - 1, len(pts) - 2)
        k = max(k, 0)
        span = wp_arc[k + 1] - wp_arc[k]
        t = 0.0 if span <= 0.0 else min(1.0, max(0.0, (a - wp_arc[k]) / span))
        qs[i] = slerp(quats[k], quats[k + 1], t)
    qs[0] = quats[0]
    qs[-1] = quats[-1]
    goal = Pose3(pts[-1], quats[-1])
    return EEMotionPlan(pts3, qs, arc, "spline", goal)


@dataclass
class MotionQuery:
    current_pose: Pose3
    current_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step_length: float = 0.0  # a_ee * dt
    dt: float = 0.1

    def __post_init__(self):
        if self.step_length < 0.0:
            raise ValueError("step length must be non-negative")


@dataclass
class NextStep:
    velocity: np.ndarray  # (3,), magnitude = step_length / dt
    target: Pose3  # desired pose one step ahead
    intermediate_goal: Pose3  # plan pose ~1.5 m ahead (or the goal if nearer)
    arc_now: float
    arc_next: float


def next_velocity(plan: EEMotionPlan, query: MotionQuery,
                  params: MotionParams | None = None,
                  arc_hint: float | None = None) -> NextStep:
    """Next-step velocity toward the point one step-length further along the plan."""
    params = params or MotionParams()
    if arc_hint is not None:
        s0 = min(max(arc_hint, 0.0), plan.length)
    else:
        s0, dist = plan.arc_of_closest(query.current_pose.position)
        if dist > params.tracking_tolerance:
            raise OffPlanError(f"query pose {dist:.3f} m from plan (tolerance "
                               f"{params.tracking_tolerance} m)")
    s1 = min(s0 + query.step_length, plan.length)
    p0 = plan.position_at(s0)
    target = plan.pose_at(s1)
    delta = target.position - p0
    norm = float(np.linalg.norm(delta))
    if query.step_length <= 0.0 or norm < 1e-15:
        vel = np.zeros(3)
    else:
        vel = delta / norm * (query.step_length / query.dt)
    inter = plan.pose_at(min(s0 + params.lookahead, plan.length))
    return NextStep(vel, target, inter, s0, s1)


def plan_motion(grid: OccupancyGrid, base_start: Pose2, start_pose: Pose3, goal: Pose3,
                params: MotionParams, profile: str = "slerp") -> EEMotionPlan:
    """Build a full plan: weights, search, smoothing, and orientation profile."""
    wm = build_weights(grid, base_start, goal, params)
    waypoints = plan_path(wm, start_pose.position[:2], goal.position[:2])
    plan = smooth_and_lift(waypoints, start_pose, goal, grid, params, blocked=wm.blocked)
    if profile == "fwd":
        plan = orientation_fwd(plan, params.fwd_blend_window)
    elif profile != "slerp":
        raise ValueError(f"unknown profile {profile!r}")
    return plan


def replan(plan: EEMotionPlan, grid_now: OccupancyGrid, base_now: Pose2,
           current_pose: Pose3, goal: Pose3, params: MotionParams
           ) -> tuple[EEMotionPlan, bool]:
    """Rebuild the plan from the current EE pose against the current map.

    Returns (plan, blocked). When no path exists under the current obstacles
    the previous plan is kept and ``blocked`` is True.
    """
    try:
        new_plan = plan_motion(grid_now, base_now, current_pose, goal, params,
                               profile="fwd" if plan.profile == "fwd" else "slerp")
        return new_plan, False
    except (NoPathError, BasePathInfeasibleError):
        return plan, True

"""Independent reference implementations used to check the package.

These deliberately avoid the library's own algorithms: brute-force distance
thresholding instead of a distance transform, heap Dijkstra instead of A*,
and a direct transcription of the reward formula.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


def brute_force_inflate(occupied: np.ndarray, radius: float, resolution: float) -> np.ndarray:
    """Mark every cell within `radius` of an occupied cell (ties occupied)."""
    ny, nx = occupied.shape
    out = np.zeros_like(occupied, dtype=bool)
    oy, ox = np.nonzero(occupied)
    if len(oy) == 0:
        return out
    for iy in range(ny):
        for ix in range(nx):
            d = np.sqrt((oy - iy) ** 2 + (ox - ix) ** 2) * resolution
            out[iy, ix] = bool((d <= radius).any())
    return out


def dijkstra_cost(weights: np.ndarray, blocked: np.ndarray, start: tuple[int, int],
                  goal: tuple[int, int], scaled: bool = True) -> float:
    """Min-cost over 8-connected paths; cell weights charged on entry."""
    ny, nx = weights.shape
    sx, sy = start
    gx, gy = goal
    dist = np.full((ny, nx), np.inf)
    dist[sy, sx] = 0.0
    heap = [(0.0, sy * nx + sx)]
    moves = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]
    while heap:
        d, u = heapq.heappop(heap)
        uy, ux = divmod(u, nx)
        if d > dist[uy, ux]:
            continue
        if (ux, uy) == (gx, gy):
            return d
        for dx, dy, step in moves:
            vx, vy = ux + dx, uy + dy
            if not (0 <= vx < nx and 0 <= vy < ny) or blocked[vy, vx]:
                continue
            cost = step * (1.0 + weights[vy, vx]) if scaled else step + weights[vy, vx]
            nd = d + cost
            if nd < dist[vy, vx]:
                dist[vy, vx] = nd
                heapq.heappush(heap, (nd, vy * nx + vx))
    return float(dist[gy, gx])


def reward_oracle(cfg, achieved_pos, achieved_q, desired_pos, desired_q,
                  action_vec, prev_action_vec, ee_speed, collision) -> float:
    """Direct transcription of the reward: distance-normalized IK and
    collision terms plus velocity and acceleration regularizers."""
    dot = float(np.dot(np.asarray(achieved_q), np.asarray(desired_q)))
    d_rot = 1.0 - dot * dot
    r_ik = -float(np.sum((np.asarray(desired_pos) - np.asarray(achieved_pos)) ** 2)) \
        - cfg.c_rot * d_rot
    r_vel = -((cfg.v_ee_max - ee_speed) ** 2)
    r_acc = -float(np.sum((np.asarray(action_vec) - np.asarray(prev_action_vec)) ** 2))
    n_vel = ee_speed / cfg.v_ee_max
    r_coll = cfg.r_coll if collision else 0.0
    return n_vel * (cfg.lambda_ik * r_ik + r_coll) + cfg.lambda_vel * r_vel \
        + cfg.lambda_acc * r_acc


def reachable_mask(blocked: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """8-connected flood fill of the free space from a start cell."""
    from scipy import ndimage

    labels, _ = ndimage.label(~blocked, structure=np.ones((3, 3), dtype=int))
    sx, sy = start
    if blocked[sy, sx]:
        return np.zeros_like(blocked, dtype=bool)
    return labels == labels[sy, sx]

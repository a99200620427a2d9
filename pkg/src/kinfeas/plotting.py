"""Trajectory figures rendered from episode logs.

Output is SVG with fixed hash salt and no date metadata, so regenerating a
figure from the same log is byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .env import EpisodeLog  # noqa: E402
from .gridmap import World  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "kinfeas"


def render_episode(log: EpisodeLog, out_path) -> None:
    """World occupancy with the base and end-effector trajectories."""
    world = World.from_dict(log.header["episode"]["world"])
    xmin, ymin, xmax, ymax = world.bounds

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(world.grid.heights, origin="lower", extent=(xmin, xmax, ymin, ymax),
              cmap="Greys", vmin=0.0, vmax=max(1.0, float(world.grid.heights.max())))

    base = np.array([[s["base_pose"]["x"], s["base_pose"]["y"]] for s in log.steps])
    ee = np.array([[s["ee_achieved"]["position"][0], s["ee_achieved"]["position"][1]]
                   for s in log.steps])
    desired = np.array([[s["ee_desired"]["position"][0], s["ee_desired"]["position"][1]]
                        for s in log.steps])
    if len(base):
        ax.plot(base[:, 0], base[:, 1], color="tab:orange", lw=1.8, label="base")
        ax.plot(ee[:, 0], ee[:, 1], color="tab:green", lw=1.8, label="end effector")
        ax.plot(desired[:, 0], desired[:, 1], color="tab:green", lw=0.8, ls="--",
                label="desired motion")

    start = log.header["episode"]["start"]
    goal = log.header["episode"]["goal"]["position"]
    ax.plot(start["x"], start["y"], "o", color="tab:blue", ms=8, label="start")
    ax.plot(goal[0], goal[1], "*", color="tab:red", ms=12, label="goal")

    cause = log.steps[-1]["termination"] if log.steps else "empty"
    ax.set_title(f"seed {log.header.get('seed')} | {log.header.get('motion')} | {cause}")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(out_path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)

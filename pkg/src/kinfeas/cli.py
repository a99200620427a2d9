"""Command-line front door: generate episodes, run seeded rollouts, plot logs.

Every command is a pure function of its files, flags, and seeds; re-running
reproduces outputs byte-identically. Exit codes: 0 success, 1 usage,
2 configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .baseline import GreedyPolicy
from .env import Action, Env, EnvConfig, EpisodeLog, run_episode
from .robot import RobotConfigError, load_robot
from .worldgen import EpisodeSpec, UnsolvableWorldError, WorldGenConfig, make_episode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_seeds(text: str) -> list[int]:
    """Accept '7', '0..99' (inclusive), or '1,4,9'."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    if "," in text:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    return [int(text)]


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)


def _load_worldgen(path: str | None) -> tuple[WorldGenConfig, str]:
    if path is None:
        return WorldGenConfig(), "default"
    import yaml

    p = Path(path)
    if not p.exists():
        raise RobotConfigError(f"worldgen config not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    return WorldGenConfig.from_dict(data), str(p)


def _load_env_cfg(path: str | None) -> tuple[EnvConfig, str]:
    if path is None:
        return EnvConfig(), "default"
    p = Path(path)
    if not p.exists():
        raise RobotConfigError(f"env config not found: {p}")
    return EnvConfig.load(p), str(p)


def _print_resolution(args, sources: dict) -> None:
    # flags beat files beat defaults; say where each setting came from
    parts = [f"{k}={v}" for k, v in sources.items()]
    print("resolved settings: " + ", ".join(parts))


def cmd_gen(args) -> int:
    robot = load_robot(args.robot)
    cfg, cfg_src = _load_worldgen(args.worldgen)
    _print_resolution(args, {"robot": f"{args.robot} (flag)",
                             "worldgen": f"{cfg_src} ({'file' if args.worldgen else 'default'})"})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = parse_seeds(args.seeds)
    for seed in seeds:
        spec = make_episode(cfg, robot, seed)
        _atomic_write(out / f"world_{seed:05d}.json",
                      json.dumps(spec.world.to_dict(), sort_keys=True, indent=2) + "\n")
        _atomic_write(out / f"episode_{seed:05d}.json", spec.to_json())
    print(f"wrote {len(seeds)} episode(s) to {out}")
    return EXIT_OK


class _ReplayPolicy:
    """Feeds back the actions recorded in a prior log."""

    def __init__(self, log: EpisodeLog, robot):
        self._actions = [s["action"] for s in log.steps]
        self._robot = robot
        self._i = 0

    def __call__(self, obs) -> Action:
        if self._i >= len(self._actions):
            return Action.zero(self._robot)
        a = Action.from_flat(np.array(self._actions[self._i]), self._robot)
        self._i += 1
        return a


def _episode_for_seed(args, cfg: WorldGenConfig, robot, seed: int) -> EpisodeSpec:
    if args.episodes:
        path = Path(args.episodes) / f"episode_{seed:05d}.json"
        if not path.exists():
            raise RobotConfigError(f"episode file not found: {path}")
        return EpisodeSpec.load(path)
    return make_episode(cfg, robot, seed)


def cmd_run(args) -> int:
    robot = load_robot(args.robot)
    env_cfg, env_src = _load_env_cfg(args.env)
    wg_cfg, wg_src = _load_worldgen(args.worldgen)
    _print_resolution(args, {
        "robot": f"{args.robot} (flag)",
        "env": f"{env_src} ({'file' if args.env else 'default'})",
        "worldgen": f"{wg_src} ({'file' if args.worldgen else 'default'})",
        "motion": f"{args.motion} (flag)",
        "policy": f"{args.policy} (flag)",
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = parse_seeds(args.seeds)
    env = Env(robot, env_cfg)
    rows = []
    wall_ms = []  # wall time stays out of the CSV so re-runs are byte-identical
    for seed in seeds:
        row = {"seed": seed, "success": 0, "steps": 0, "return": 0.0,
               "termination": "error"}
        try:
            spec = _episode_for_seed(args, wg_cfg, robot, seed)
            if args.policy == "greedy":
                policy = GreedyPolicy(robot, env_cfg=env_cfg)
            else:
                replay_path = Path(args.replay) / f"log_{seed:05d}.jsonl" \
                    if Path(args.replay).is_dir() else Path(args.replay)
                policy = _ReplayPolicy(EpisodeLog.load(replay_path), robot)
            t0 = time.perf_counter()
            log = run_episode(env, spec, policy, motion_kind=args.motion)
            elapsed = time.perf_counter() - t0
            _atomic_write(out / f"log_{seed:05d}.jsonl", log.to_jsonl())
            if args.plots:
                from .plotting import render_episode
                render_episode(log, out / f"fig_{seed:05d}.svg")
            row.update(success=int(log.success), steps=len(log.steps),
                       **{"return": round(log.episode_return, 9)},
                       termination=log.steps[-1]["termination"] if log.steps else "empty")
            wall_ms.append(1000.0 * elapsed / max(1, len(log.steps)))
        except (UnsolvableWorldError, RuntimeError) as exc:
            print(f"seed {seed}: episode error: {exc}", file=sys.stderr)
            row["termination"] = f"error:{type(exc).__name__}"
        rows.append(row)

    summary_path = out / "summary.csv"
    buf = []
    fields = ["seed", "success", "steps", "return", "termination"]
    buf.append(",".join(fields))
    for row in rows:
        buf.append(",".join(str(row[f]) for f in fields))
    _atomic_write(summary_path, "\n".join(buf) + "\n")

    ran = [r for r in rows if not str(r["termination"]).startswith("error")]
    n_ok = sum(r["success"] for r in ran)
    rate = n_ok / len(rows) if rows else 0.0
    mean_len = np.mean([r["steps"] for r in ran]) if ran else 0.0
    mean_ms = np.mean(wall_ms) if wall_ms else 0.0
    print(f"episodes={len(rows)} success_rate={rate:.3f} "
          f"mean_steps={mean_len:.1f} mean_step_ms={mean_ms:.2f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import render_episode

    log = EpisodeLog.load(args.log)
    out = Path(args.out) if args.out else Path(args.log).with_suffix(".svg")
    render_episode(log, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_bridge(args) -> int:
    from .bridge import serve_stdio

    serve_stdio()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinfeas",
                     description="kinematic-feasibility simulator for mobile manipulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate world and episode files")
    p_gen.add_argument("--robot", default="pr2_like")
    p_gen.add_argument("--worldgen", default=None, help="worldgen config YAML")
    p_gen.add_argument("--seeds", required=True, help="e.g. 7, 0..99, or 1,4,9")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run seeded rollouts and write logs")
    p_run.add_argument("--robot", default="pr2_like")
    p_run.add_argument("--env", default=None, help="env config YAML")
    p_run.add_argument("--worldgen", default=None, help="worldgen config YAML")
    p_run.add_argument("--motion", default="slerp", choices=["slerp", "fwd", "spline"])
    p_run.add_argument("--seeds", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--episodes", default=None,
                       help="directory of pre-generated episode files")
    p_run.add_argument("--policy", default="greedy", choices=["greedy", "replay"])
    p_run.add_argument("--replay", default=None,
                       help="log file or directory for --policy replay")
    p_run.add_argument("--plots", action="store_true", help="render an SVG per episode")
    p_run.set_defaults(func=cmd_run)

    p_plot = sub.add_parser("plot", help="render a trajectory figure from a log")
    p_plot.add_argument("--log", required=True)
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=cmd_plot)

    p_bridge = sub.add_parser("bridge", help="serve reset/step over stdio (JSON lines)")
    p_bridge.set_defaults(func=cmd_bridge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except RobotConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep a distinct exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

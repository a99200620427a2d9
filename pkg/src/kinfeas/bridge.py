"""Line-delimited JSON bridge over stdio for external language bindings.

One request object per line on stdin, one response per line on stdout.
Requests carry an ``id`` echoed back, an ``op``, and op-specific fields:

  make_env   {robot, env_config?, worldgen?, motion?, seed}  -> {handle, layout,
              action_dim, observation_dim}
  reset      {handle}                  -> {observation}
  step       {handle, action: [...]}   -> {observation, reward, terminated,
              bootstrap, info}
  gen_episode {robot, worldgen?, seed} -> {episode}
  close      {handle}                  -> {}

Errors come back as {id, ok: false, error: {type, message}}.
"""

from __future__ import annotations

import json
import sys

import numpy as np

from .env import Action, Env, EnvConfig
from .robot import load_robot
from .worldgen import WorldGenConfig, make_episode


class ClosedHandleError(RuntimeError):
    pass


class _EnvSession:
    """One environment handle: seeded episode stream plus the live env."""

    def __init__(self, robot_name: str, env_cfg: EnvConfig, wg_cfg: WorldGenConfig,
                 motion: str, seed: int):
        self.robot = load_robot(robot_name)
        self.env = Env(self.robot, env_cfg)
        self.wg_cfg = wg_cfg
        self.motion = motion
        self.seed = int(seed)
        self.episode_index = 0
        self.closed = False

    def reset(self) -> np.ndarray:
        spec = make_episode(self.wg_cfg, self.robot, self.seed + self.episode_index)
        self.episode_index += 1
        obs = self.env.reset(spec, self.motion)
        return obs.flatten()

    def step(self, action_vec) -> dict:
        action = Action.from_flat(np.asarray(action_vec, dtype=float), self.robot)
        result = self.env.step(action)
        return {
            "observation": result.observation.flatten().tolist(),
            "reward": result.reward,
            "terminated": result.terminated,
            "bootstrap": result.bootstrap,
            "info": {
                "cause": result.cause,
                "breakdown": result.breakdown,
                "collision": bool(result.info["collision"]),
                "ik_ok": bool(result.info["ik_ok"]),
            },
        }


class BridgeServer:
    def __init__(self):
        self._sessions: dict[str, _EnvSession] = {}
        self._counter = 0

    def _session(self, handle: str) -> _EnvSession:
        sess = self._sessions.get(handle)
        if sess is None or sess.closed:
            raise ClosedHandleError(f"handle {handle!r} is closed or unknown")
        return sess

    def handle_request(self, req: dict) -> dict:
        op = req.get("op")
        if op == "make_env":
            env_cfg = EnvConfig.load(req["env_config"]) if req.get("env_config") else EnvConfig()
            if req.get("worldgen"):
                import yaml
                from pathlib import Path

                path = Path(req["worldgen"])
                if not path.exists():
                    raise FileNotFoundError(f"worldgen config not found: {path}")
                wg_cfg = WorldGenConfig.from_dict(yaml.safe_load(path.read_text()) or {})
            else:
                wg_cfg = WorldGenConfig()
            sess = _EnvSession(req["robot"], env_cfg, wg_cfg,
                               req.get("motion", "slerp"), req["seed"])
            self._counter += 1
            handle = f"env{self._counter}"
            self._sessions[handle] = sess
            return {"handle": handle, "action_dim": Action.dim(sess.robot)}
        if op == "reset":
            sess = self._session(req["handle"])
            obs = sess.reset()
            layout = sess.env._observe().layout()
            return {"observation": obs.tolist(), "layout": layout}
        if op == "step":
            sess = self._session(req["handle"])
            return sess.step(req["action"])
        if op == "gen_episode":
            robot = load_robot(req["robot"])
            if req.get("worldgen"):
                import yaml
                from pathlib import Path

                path = Path(req["worldgen"])
                if not path.exists():
                    raise FileNotFoundError(f"worldgen config not found: {path}")
                wg_cfg = WorldGenConfig.from_dict(yaml.safe_load(path.read_text()) or {})
            else:
                wg_cfg = WorldGenConfig()
            spec = make_episode(wg_cfg, robot, req["seed"])
            return {"episode": spec.to_dict()}
        if op == "close":
            sess = self._session(req["handle"])
            sess.closed = True
            return {}
        raise ValueError(f"unknown op {op!r}")


def serve_stdio() -> None:
    server = BridgeServer()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            req = json.loads(line)
            rid = req.get("id")
            result = server.handle_request(req)
            resp = {"id": rid, "ok": True, "result": result}
        except Exception as exc:
            resp = {"id": rid, "ok": False,
                    "error": {"type": type(exc).__name__, "message": str(exc)}}
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  BridgeClient,
  ClosedHandleError,
  EnvHandle,
  RemoteError,
  generateEpisode,
  makeEnv,
  makeEnvOn,
  sliceObservation,
} from "../src/index.js";

const PYTHON = process.env.KINFEAS_PYTHON ?? "python3";
const PARITY_SEEDS = Array.from({ length: 20 }, (_, i) => i);

interface LogStep {
  action: number[];
  reward: number;
  termination: string;
  bootstrap: boolean;
}

let workDir: string;
let envConfigPath: string;
const nativeLogs = new Map<number, LogStep[]>();

beforeAll(() => {
  workDir = mkdtempSync(join(tmpdir(), "kinfeas-bindings-"));
  // cap episode length so the parity corpus stays quick
  envConfigPath = join(workDir, "env_short.yaml");
  writeFileSync(envConfigPath, "max_steps: 120\n");
  const out = join(workDir, "native");
  execFileSync(PYTHON, [
    "-m", "kinfeas.cli", "run",
    "--seeds", `${PARITY_SEEDS[0]}..${PARITY_SEEDS[PARITY_SEEDS.length - 1]}`,
    "--env", envConfigPath,
    "--out", out,
  ], { stdio: ["ignore", "ignore", "inherit"] });
  for (const seed of PARITY_SEEDS) {
    const name = join(out, `log_${String(seed).padStart(5, "0")}.jsonl`);
    const lines = readFileSync(name, "utf8").trim().split("\n");
    nativeLogs.set(seed, lines.slice(1).map((ln) => JSON.parse(ln) as LogStep));
  }
}, 600_000);

describe("observation layout", () => {
  it("slices partition the vector exactly", async () => {
    const env = await makeEnv({ robot: "pr2_like", seed: 0, envConfig: envConfigPath });
    try {
      const { observation, layout } = await env.reset();
      expect(layout[0]).toEqual({ name: "coarse_map", offset: 0, length: 900 });
      expect(layout[1].length).toBe(900);
      let offset = 0;
      for (const entry of layout) {
        expect(entry.offset).toBe(offset);
        offset += entry.length;
      }
      expect(offset).toBe(observation.length);
      expect(sliceObservation(observation, layout, "fine_map")).toHaveLength(900);
      expect(sliceObservation(observation, layout, "previous_action"))
        .toEqual(new Array(env.actionDim).fill(0));
    } finally {
      await env.close();
    }
  }, 120_000);
});

describe("handle lifecycle", () => {
  it("same seed gives identical first observations", async () => {
    const client = new BridgeClient(PYTHON);
    try {
      const a = await makeEnvOn(client, { robot: "pr2_like", seed: 7 });
      const b = await makeEnvOn(client, { robot: "pr2_like", seed: 7 });
      const ra = await a.reset();
      const rb = await b.reset();
      expect(ra.observation).toEqual(rb.observation);
    } finally {
      await client.dispose();
    }
  }, 120_000);

  it("rejects a wrong action length before any state change", async () => {
    const env = await makeEnv({ robot: "pr2_like", seed: 1, envConfig: envConfigPath });
    try {
      const first = await env.reset();
      await expect(env.step([0, 0])).rejects.toThrow(RangeError);
      // the native side also validates length before touching state
      const ok = await env.step(new Array(env.actionDim).fill(0));
      expect(ok.observation.length).toBe(first.observation.length);
    } finally {
      await env.close();
    }
  }, 120_000);

  it("operations on a closed handle fail cleanly", async () => {
    const env = await makeEnv({ robot: "pr2_like", seed: 2, envConfig: envConfigPath });
    await env.close();
    await expect(async () => env.reset()).rejects.toThrow(ClosedHandleError);
  }, 120_000);

  it("missing config errors carry the path", async () => {
    const client = new BridgeClient(PYTHON);
    try {
      await expect(
        makeEnvOn(client, { robot: "pr2_like", seed: 0, worldgen: "/does/not/exist.yaml" }),
      ).rejects.toThrow(/\/does\/not\/exist\.yaml/);
    } finally {
      await client.dispose();
    }
  }, 120_000);

  it("mirrors the episode generator", async () => {
    const episode = (await generateEpisode({ robot: "pr2_like", seed: 9 })) as {
      seed: number;
      start: { x: number; y: number };
      world: { shapes: unknown[] };
    };
    expect(episode.seed).toBe(9);
    expect(episode.world.shapes.length).toBeGreaterThan(0);
  }, 120_000);
});

describe("native parity", () => {
  it("reward and termination streams match the native runner", async () => {
    const client = new BridgeClient(PYTHON);
    let steps = 0;
    let worst = 0;
    try {
      for (const seed of PARITY_SEEDS) {
        const log = nativeLogs.get(seed)!;
        const env = await makeEnvOn(client, {
          robot: "pr2_like",
          seed,
          envConfig: envConfigPath,
        });
        await env.reset();
        for (const rec of log) {
          const out = await env.step(rec.action);
          worst = Math.max(worst, Math.abs(out.reward - rec.reward));
          expect(Math.abs(out.reward - rec.reward)).toBeLessThanOrEqual(1e-12);
          expect(out.info.cause).toBe(rec.termination);
          expect(out.bootstrap).toBe(rec.bootstrap);
          steps += 1;
          if (out.terminated) break;
        }
        await env.close();
      }
    } finally {
      await client.dispose();
    }
    expect(steps).toBeGreaterThan(500);
    // eslint-disable-next-line no-console
    console.log(`parity: ${steps} steps across 20 episodes, worst |diff|=${worst}`);
  }, 600_000);
});

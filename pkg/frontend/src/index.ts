/**
 * Bindings for the kinematic-feasibility environment.
 *
 * Each handle owns one native environment instance, reached through a
 * per-client bridge subprocess. Observations arrive as flat numeric vectors
 * with a layout descriptor giving the slice offsets:
 * [coarse map, fine map, joints, ee velocity, desired pose, goal pose,
 * previous action].
 *
 * @example
 * const env = await makeEnv({ robot: "pr2_like", seed: 0 });
 * const { observation, layout } = await env.reset();
 * const step = await env.step(new Array(env.actionDim).fill(0));
 * await env.close();
 */

import { BridgeClient, RemoteError } from "./bridge.js";

export { BridgeClient, RemoteError };

export interface LayoutEntry {
  name: string;
  offset: number;
  length: number;
}

export interface ResetResult {
  observation: number[];
  layout: LayoutEntry[];
}

export interface StepInfo {
  cause: string;
  breakdown: {
    r_ik: number;
    r_coll: number;
    r_vel: number;
    r_acc: number;
    n_vel: number;
  };
  collision: boolean;
  ik_ok: boolean;
}

export interface StepResult {
  observation: number[];
  reward: number;
  terminated: boolean;
  bootstrap: boolean;
  info: StepInfo;
}

export interface MakeEnvOptions {
  robot: string;
  seed: number;
  motion?: "slerp" | "fwd" | "spline";
  envConfig?: string;
  worldgen?: string;
  pythonExecutable?: string;
}

export interface GenerateEpisodeOptions {
  robot: string;
  seed: number;
  worldgen?: string;
  pythonExecutable?: string;
}

export class ClosedHandleError extends Error {}

/** One native environment instance; not shareable across callers. */
export class EnvHandle {
  readonly actionDim: number;
  private closed = false;

  constructor(
    private readonly client: BridgeClient,
    private readonly handle: string,
    actionDim: number,
    private readonly ownsClient: boolean,
  ) {
    this.actionDim = actionDim;
  }

  private guard(): void {
    if (this.closed) throw new ClosedHandleError("environment handle is closed");
  }

  async reset(): Promise<ResetResult> {
    this.guard();
    return this.client.request<ResetResult>("reset", { handle: this.handle });
  }

  async step(action: number[]): Promise<StepResult> {
    this.guard();
    if (action.length !== this.actionDim) {
      throw new RangeError(`expected action of length ${this.actionDim}, got ${action.length}`);
    }
    return this.client.request<StepResult>("step", { handle: this.handle, action });
  }

  async close(): Promise<void> {
    if (this.closed) return;
    this.closed = true;
    await this.client.request("close", { handle: this.handle });
    if (this.ownsClient) await this.client.dispose();
  }
}

/** Create an environment handle, spawning a dedicated bridge subprocess. */
export async function makeEnv(opts: MakeEnvOptions): Promise<EnvHandle> {
  const client = new BridgeClient(opts.pythonExecutable);
  return makeEnvOn(client, opts, true);
}

/** Create an environment handle on an existing bridge client. */
export async function makeEnvOn(
  client: BridgeClient,
  opts: MakeEnvOptions,
  ownsClient = false,
): Promise<EnvHandle> {
  const result = await client.request<{ handle: string; action_dim: number }>("make_env", {
    robot: opts.robot,
    seed: opts.seed,
    motion: opts.motion ?? "slerp",
    env_config: opts.envConfig ?? null,
    worldgen: opts.worldgen ?? null,
  });
  return new EnvHandle(client, result.handle, result.action_dim, ownsClient);
}

/** Mirror of the CLI episode generator: a solvable episode spec per seed. */
export async function generateEpisode(opts: GenerateEpisodeOptions): Promise<unknown> {
  const client = new BridgeClient(opts.pythonExecutable);
  try {
    const result = await client.request<{ episode: unknown }>("gen_episode", {
      robot: opts.robot,
      seed: opts.seed,
      worldgen: opts.worldgen ?? null,
    });
    return result.episode;
  } finally {
    await client.dispose();
  }
}

/** Slice one named segment out of a flat observation. */
export function sliceObservation(
  observation: number[],
  layout: LayoutEntry[],
  name: string,
): number[] {
  const entry = layout.find((e) => e.name === name);
  if (!entry) throw new RangeError(`no layout entry named ${name}`);
  return observation.slice(entry.offset, entry.offset + entry.length);
}

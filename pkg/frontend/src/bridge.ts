import { ChildProcessWithoutNullStreams, spawn } from "node:child_process";
import { once } from "node:events";

export interface BridgeError {
  type: string;
  message: string;
}

interface BridgeResponse {
  id: number;
  ok: boolean;
  result?: unknown;
  error?: BridgeError;
}

export class RemoteError extends Error {
  readonly remoteType: string;

  constructor(err: BridgeError) {
    super(`${err.type}: ${err.message}`);
    this.remoteType = err.type;
  }
}

/**
 * One bridge child process speaking newline-delimited JSON on stdio.
 *
 * Requests carry an incrementing id; responses resolve the matching pending
 * promise. Calls are independent, so several environment handles may step
 * concurrently over the same client.
 */
export class BridgeClient {
  private child: ChildProcessWithoutNullStreams;
  private pending = new Map<number, { resolve: (v: unknown) => void; reject: (e: Error) => void }>();
  private nextId = 1;
  private buffer = "";
  private closed = false;

  constructor(pythonExecutable: string = process.env.KINFEAS_PYTHON ?? "python3") {
    this.child = spawn(pythonExecutable, ["-m", "kinfeas.cli", "bridge"], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    this.child.stdout.setEncoding("utf8");
    this.child.stdout.on("data", (chunk: string) => this.onData(chunk));
    this.child.on("exit", (code) => this.failAll(new Error(`bridge exited with code ${code}`)));
    this.child.on("error", (err) => this.failAll(err));
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx).trim();
      this.buffer = this.buffer.slice(idx + 1);
      if (!line) continue;
      const resp = JSON.parse(line) as BridgeResponse;
      const waiter = this.pending.get(resp.id);
      if (!waiter) continue;
      this.pending.delete(resp.id);
      if (resp.ok) {
        waiter.resolve(resp.result);
      } else {
        waiter.reject(new RemoteError(resp.error ?? { type: "Unknown", message: "no detail" }));
      }
    }
  }

  private failAll(err: Error): void {
    if (this.closed) return;
    for (const waiter of this.pending.values()) waiter.reject(err);
    this.pending.clear();
  }

  request<T>(op: string, fields: Record<string, unknown> = {}): Promise<T> {
    const id = this.nextId++;
    const line = JSON.stringify({ id, op, ...fields }) + "\n";
    return new Promise<T>((resolve, reject) => {
      this.pending.set(id, { resolve: resolve as (v: unknown) => void, reject });
      this.child.stdin.write(line);
    });
  }

  async dispose(): Promise<void> {
    if (this.closed) return;
    this.closed = true;
    this.child.stdin.end();
    if (this.child.exitCode === null) {
      const timer = setTimeout(() => this.child.kill(), 2000);
      await once(this.child, "exit");
      clearTimeout(timer);
    }
  }
}

/*
 * Userspace model of the in-kernel probe handlers.
 *
 * Mirrors what the tracepoint programs do on a real kernel: maintain the
 * traced PID set (seeded with the root pid, grown on fork, shrunk on
 * exit), filter every event through it, publish fixed-size records into
 * a bounded ring, and count what would not fit in per-CPU drop counters.
 * Oversized paths and argv/env blocks are truncated with the truncation
 * flag set, never silently.
 */

import {
  MAX_ARGV_ENV_BYTES,
  MAX_PATH_BYTES,
  RawKernelRecord,
  RecordKind,
} from "./records.js";

export interface ProbeOptions {
  ringCapacity?: number;
  pidSetCapacity?: number;
  maxPathBytes?: number;
  maxArgvEnvBytes?: number;
  cpus?: number;
  /** Pid of the tracer that launched the root command (its ppid). */
  rootPpid?: number;
}

export interface OpenContext {
  ts: bigint | number;
  pid: number;
  ppid?: number;
  comm?: string;
  path: string;
  flags: number;
  returnFd: number;
  cpu?: number;
}

export interface ForkContext {
  ts: bigint | number;
  parentPid: number;
  childPid: number;
  comm?: string;
  cpu?: number;
}

export interface ExecContext {
  ts: bigint | number;
  pid: number;
  comm: string;
  argv: string[];
  env: string[];
  /** Simulates unreadable user memory: argv/env come back partial. */
  readableStrings?: number;
  cpu?: number;
}

export interface ExitContext {
  ts: bigint | number;
  pid: number;
  comm?: string;
  cpu?: number;
}

function truncateUtf8(value: string, maxBytes: number): {
  value: string;
  truncated: boolean;
} {
  const raw = Buffer.from(value, "utf8");
  if (raw.length <= maxBytes) {
    return { value, truncated: false };
  }
  let cut = maxBytes;
  while (cut > 0 && (raw[cut]! & 0xc0) === 0x80) {
    cut--; // do not split a multibyte sequence
  }
  return { value: raw.subarray(0, cut).toString("utf8"), truncated: true };
}

function capStringList(values: string[], budget: number): {
  values: string[];
  used: number;
  truncated: boolean;
} {
  const out: string[] = [];
  let used = 0;
  for (const value of values) {
    const raw = Buffer.from(value, "utf8");
    if (used + raw.length > budget) {
      const room = budget - used;
      if (room > 0) {
        const { value: cut } = truncateUtf8(value, room);
        if (cut.length > 0) {
          out.push(cut);
          used += Buffer.from(cut, "utf8").length;
        }
      }
      return { values: out, used, truncated: true };
    }
    out.push(value);
    used += raw.length;
  }
  return { values: out, used, truncated: false };
}

export class ProbeEngine {
  private traced = new Set<number>();
  private ring: RawKernelRecord[] = [];
  private dropCounters: number[];
  private comms = new Map<number, string>();
  private parents = new Map<number, number>();

  readonly warnings: string[] = [];
  /** Events that survived the scope filter (drop-accounting invariant). */
  passedFilter = 0;
  published = 0;

  private readonly ringCapacity: number;
  private readonly pidSetCapacity: number;
  private readonly maxPathBytes: number;
  private readonly maxArgvEnvBytes: number;

  constructor(rootPid: number, options: ProbeOptions = {}) {
    this.ringCapacity = options.ringCapacity ?? 4096;
    this.pidSetCapacity = options.pidSetCapacity ?? 16384;
    this.maxPathBytes = options.maxPathBytes ?? MAX_PATH_BYTES;
    this.maxArgvEnvBytes = options.maxArgvEnvBytes ?? MAX_ARGV_ENV_BYTES;
    this.dropCounters = new Array(options.cpus ?? 1).fill(0);
    this.traced.add(rootPid);
    this.parents.set(rootPid, options.rootPpid ?? 1);
  }

  get tracedPids(): ReadonlySet<number> {
    return this.traced;
  }

  get done(): boolean {
    return this.traced.size === 0;
  }

  get droppedTotal(): number {
    return this.dropCounters.reduce((a, b) => a + b, 0);
  }

  private publish(record: RawKernelRecord, cpu = 0): void {
    this.passedFilter++;
    if (this.ring.length >= this.ringCapacity) {
      this.dropCounters[cpu % this.dropCounters.length]!++;
      return;
    }
    this.ring.push(record);
    this.published++;
  }

  private commFor(pid: number, fallback = ""): string {
    return this.comms.get(pid) ?? fallback;
  }

  onOpen(ctx: OpenContext): void {
    if (ctx.returnFd < 0 || !this.traced.has(ctx.pid)) {
      return;
    }
    const { value: path, truncated } = truncateUtf8(ctx.path, this.maxPathBytes);
    this.publish(
      {
        kind: RecordKind.Open,
        ts: BigInt(ctx.ts),
        pid: ctx.pid,
        ppid: ctx.ppid ?? 0,
        comm: ctx.comm ?? this.commFor(ctx.pid),
        truncated,
        openFlags: ctx.flags,
        path,
      },
      ctx.cpu,
    );
  }

  onFork(ctx: ForkContext): void {
    if (!this.traced.has(ctx.parentPid)) {
      return;
    }
    let truncated = false;
    if (this.traced.size >= this.pidSetCapacity) {
      truncated = true;
      this.warnings.push(
        `pid-set capacity ${this.pidSetCapacity} reached; ` +
          `pid ${ctx.childPid} not tracked`,
      );
    } else {
      this.traced.add(ctx.childPid);
    }
    const comm = ctx.comm ?? this.commFor(ctx.parentPid);
    this.comms.set(ctx.childPid, comm);
    this.parents.set(ctx.childPid, ctx.parentPid);
    this.publish(
      {
        kind: RecordKind.Fork,
        ts: BigInt(ctx.ts),
        pid: ctx.childPid,
        ppid: ctx.parentPid,
        comm,
        truncated,
      },
      ctx.cpu,
    );
  }

  onExec(ctx: ExecContext): void {
    if (!this.traced.has(ctx.pid)) {
      return;
    }
    let argv = ctx.argv;
    let env = ctx.env;
    let partial = false;
    if (ctx.readableStrings !== undefined) {
      const readable = Math.max(0, ctx.readableStrings);
      partial = readable < argv.length + env.length;
      argv = argv.slice(0, readable);
      env = env.slice(0, Math.max(0, readable - ctx.argv.length));
    }
    const argvCap = capStringList(argv, this.maxArgvEnvBytes);
    const envCap = capStringList(env, this.maxArgvEnvBytes - argvCap.used);
    this.comms.set(ctx.pid, ctx.comm);
    this.publish(
      {
        kind: RecordKind.Exec,
        ts: BigInt(ctx.ts),
        pid: ctx.pid,
        ppid: this.ppidOf(ctx.pid),
        comm: ctx.comm,
        truncated: partial || argvCap.truncated || envCap.truncated,
        argv: argvCap.values,
        env: envCap.values,
      },
      ctx.cpu,
    );
  }

  private ppidOf(pid: number): number {
    return this.parents.get(pid) ?? 0;
  }

  onExit(ctx: ExitContext): void {
    if (!this.traced.has(ctx.pid)) {
      return;
    }
    this.traced.delete(ctx.pid);
    this.publish(
      {
        kind: RecordKind.Exit,
        ts: BigInt(ctx.ts),
        pid: ctx.pid,
        ppid: 0,
        comm: ctx.comm ?? this.commFor(ctx.pid),
        truncated: false,
      },
      ctx.cpu,
    );
  }

  /**
   * Drain published records, surfacing accumulated drops as an
   * in-stream drop record stamped at the given (or last seen) ts.
   */
  drain(dropTs?: bigint | number): RawKernelRecord[] {
    const out = this.ring;
    this.ring = [];
    const dropped = this.droppedTotal;
    if (dropped > 0) {
      const last = out.length > 0 ? out[out.length - 1]!.ts : 0n;
      out.push({
        kind: RecordKind.Drop,
        ts: dropTs !== undefined ? BigInt(dropTs) : last,
        pid: 0,
        ppid: 0,
        comm: "",
        truncated: false,
        dropped,
      });
      this.dropCounters.fill(0);
    }
    return out;
  }
}

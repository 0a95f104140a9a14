/*
 * Convert captured records into the consumer's replay event log.
 *
 * The log format is the external contract: line-delimited JSON, UTF-8,
 * LF endings, fixed key order (v, ts, kind, pid, ppid, comm, path,
 * mode, argv, env, sha256, dropped), a header first and an optional
 * summary last. Anything this emits must replay bit-exactly.
 */

import { RawKernelRecord, RecordKind } from "./records.js";

const O_ACCMODE = 0o3;
const O_WRONLY = 0o1;
const O_RDWR = 0o2;
const O_CREAT = 0o100;
const O_TRUNC = 0o1000;

export function modeFromFlags(flags: number): "r" | "w" | "rw" {
  const accmode = flags & O_ACCMODE;
  if (accmode === O_RDWR) {
    return "rw";
  }
  if (accmode === O_WRONLY || (flags & (O_CREAT | O_TRUNC)) !== 0) {
    return "w";
  }
  return "r";
}

export interface ConvertOptions {
  /** RFC 3339 UTC trace start, e.g. "2026-01-05T10:00:00Z". */
  started: string;
  /** Tool tag for the header, "<name>/<version>". */
  tool: string;
  /** Digest lookup for open events (path -> 64-hex sha256). */
  digestFor?: (path: string, record: RawKernelRecord) => string | undefined;
  /** Append the closing summary line (default true). */
  summary?: boolean;
}

const KIND_NAMES: Record<RecordKind, string> = {
  [RecordKind.Open]: "open",
  [RecordKind.Fork]: "fork",
  [RecordKind.Exec]: "exec",
  [RecordKind.Exit]: "exit",
  [RecordKind.Drop]: "drop",
};

export function recordToEventLine(
  record: RawKernelRecord,
  digest?: string,
): string {
  const kind = KIND_NAMES[record.kind];
  const out: Record<string, unknown> = {
    v: 1,
    ts: Number(record.ts),
    kind,
    pid: record.pid,
  };
  const needsPpid =
    record.kind === RecordKind.Fork || record.kind === RecordKind.Exec;
  if (needsPpid || record.ppid !== 0) {
    out.ppid = record.ppid;
  }
  out.comm = record.comm;
  if (record.kind === RecordKind.Open) {
    out.path = record.path;
    out.mode = modeFromFlags(record.openFlags ?? 0);
    if (digest !== undefined) {
      out.sha256 = digest;
    }
  } else if (record.kind === RecordKind.Exec) {
    out.argv = record.argv ?? [];
    out.env = record.env ?? [];
  } else if (record.kind === RecordKind.Drop) {
    out.dropped = record.dropped ?? 0;
  }
  return JSON.stringify(out);
}

export function recordsToEventLog(
  records: RawKernelRecord[],
  options: ConvertOptions,
): string {
  const lines: string[] = [
    JSON.stringify({
      v: 1,
      kind: "header",
      started: options.started,
      tool: options.tool,
    }),
  ];
  let dropped = 0;
  for (const record of records) {
    let digest: string | undefined;
    if (record.kind === RecordKind.Open && options.digestFor) {
      digest = options.digestFor(record.path ?? "", record);
    }
    if (record.kind === RecordKind.Drop) {
      dropped += record.dropped ?? 0;
    }
    lines.push(recordToEventLine(record, digest));
  }
  if (options.summary !== false) {
    lines.push(
      JSON.stringify({
        v: 1,
        kind: "summary",
        events: records.length,
        dropped,
      }),
    );
  }
  return lines.join("\n") + "\n";
}

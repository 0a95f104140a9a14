/*
 * Layout-v1 binary records: the wire contract between the kernel probes
 * and the userspace consumer.
 *
 * All integers little-endian:
 *
 *   u8  layout version (= 1)
 *   u8  kind            (1 open, 2 fork, 3 exec, 4 exit, 5 drop)
 *   u8  flags           (bit 0: payload truncated)
 *   u8  reserved        (= 0)
 *   u64 ts              (monotonic ns since trace start)
 *   u32 pid
 *   u32 ppid
 *   u8  comm[16]        (NUL-padded)
 *   u32 payload_len
 *   u8  payload[payload_len]
 *
 * Payloads: open = u32 open(2) flags + path bytes; exec = u32 argc,
 * argc x (u32 len + bytes), u32 envc, envc x (u32 len + bytes);
 * drop = u32 lost-record count; fork/exit = empty.
 */

export const LAYOUT_VERSION = 1;
export const HEADER_SIZE = 40;
export const COMM_SIZE = 16;
export const MAX_PATH_BYTES = 4096;
export const MAX_ARGV_ENV_BYTES = 32768;
export const MAX_PAYLOAD_BYTES = 8 + MAX_ARGV_ENV_BYTES + 4 * 2048;
export const MAX_RECORD_BYTES = HEADER_SIZE + MAX_PAYLOAD_BYTES;

export const FLAG_TRUNCATED = 0x01;

export enum RecordKind {
  Open = 1,
  Fork = 2,
  Exec = 3,
  Exit = 4,
  Drop = 5,
}

export interface RawKernelRecord {
  kind: RecordKind;
  ts: bigint;
  pid: number;
  ppid: number;
  comm: string;
  truncated: boolean;
  openFlags?: number;
  path?: string;
  argv?: string[];
  env?: string[];
  dropped?: number;
}

export class RecordFormatError extends Error {}

function encodeStrings(values: string[]): Buffer {
  const parts: Buffer[] = [];
  const count = Buffer.alloc(4);
  count.writeUInt32LE(values.length, 0);
  parts.push(count);
  for (const value of values) {
    const raw = Buffer.from(value, "utf8");
    const len = Buffer.alloc(4);
    len.writeUInt32LE(raw.length, 0);
    parts.push(len, raw);
  }
  return Buffer.concat(parts);
}

export function encodeRecord(record: RawKernelRecord): Buffer {
  let payload: Buffer;
  switch (record.kind) {
    case RecordKind.Open: {
      const path = Buffer.from(record.path ?? "", "utf8");
      if (path.length > MAX_PATH_BYTES) {
        throw new RecordFormatError(
          `path exceeds ${MAX_PATH_BYTES} bytes; truncate before encoding`,
        );
      }
      payload = Buffer.alloc(4 + path.length);
      payload.writeUInt32LE(record.openFlags ?? 0, 0);
      path.copy(payload, 4);
      break;
    }
    case RecordKind.Exec: {
      payload = Buffer.concat([
        encodeStrings(record.argv ?? []),
        encodeStrings(record.env ?? []),
      ]);
      break;
    }
    case RecordKind.Drop: {
      payload = Buffer.alloc(4);
      payload.writeUInt32LE(record.dropped ?? 0, 0);
      break;
    }
    default:
      payload = Buffer.alloc(0);
  }
  if (payload.length > MAX_PAYLOAD_BYTES) {
    throw new RecordFormatError(
      `payload ${payload.length} exceeds cap ${MAX_PAYLOAD_BYTES}`,
    );
  }
  const head = Buffer.alloc(HEADER_SIZE);
  head.writeUInt8(LAYOUT_VERSION, 0);
  head.writeUInt8(record.kind, 1);
  head.writeUInt8(record.truncated ? FLAG_TRUNCATED : 0, 2);
  head.writeUInt8(0, 3);
  head.writeBigUInt64LE(record.ts, 4);
  head.writeUInt32LE(record.pid, 12);
  head.writeUInt32LE(record.ppid, 16);
  Buffer.from(record.comm, "utf8").subarray(0, COMM_SIZE).copy(head, 20);
  head.writeUInt32LE(payload.length, 36);
  return Buffer.concat([head, payload]);
}

function decodeStrings(
  payload: Buffer,
  offset: number,
  what: string,
): { values: string[]; next: number } {
  if (offset + 4 > payload.length) {
    throw new RecordFormatError(`truncated ${what} count`);
  }
  const count = payload.readUInt32LE(offset);
  offset += 4;
  const values: string[] = [];
  for (let i = 0; i < count; i++) {
    if (offset + 4 > payload.length) {
      throw new RecordFormatError(`truncated ${what} length`);
    }
    const len = payload.readUInt32LE(offset);
    offset += 4;
    if (offset + len > payload.length) {
      throw new RecordFormatError(`truncated ${what} string`);
    }
    values.push(payload.subarray(offset, offset + len).toString("utf8"));
    offset += len;
  }
  return { values, next: offset };
}

export function decodeRecord(
  buffer: Buffer,
  offset = 0,
): { record: RawKernelRecord; next: number } {
  if (offset + HEADER_SIZE > buffer.length) {
    throw new RecordFormatError("truncated record header");
  }
  const version = buffer.readUInt8(offset);
  if (version !== LAYOUT_VERSION) {
    throw new RecordFormatError(`unsupported record layout ${version}`);
  }
  const kind = buffer.readUInt8(offset + 1) as RecordKind;
  if (kind < RecordKind.Open || kind > RecordKind.Drop) {
    throw new RecordFormatError(`unknown record kind ${kind}`);
  }
  const flags = buffer.readUInt8(offset + 2);
  const ts = buffer.readBigUInt64LE(offset + 4);
  const pid = buffer.readUInt32LE(offset + 12);
  const ppid = buffer.readUInt32LE(offset + 16);
  const commRaw = buffer.subarray(offset + 20, offset + 20 + COMM_SIZE);
  const nul = commRaw.indexOf(0);
  const comm = commRaw.subarray(0, nul < 0 ? COMM_SIZE : nul).toString("utf8");
  const payloadLen = buffer.readUInt32LE(offset + 36);
  if (payloadLen > MAX_PAYLOAD_BYTES) {
    throw new RecordFormatError(`payload length ${payloadLen} exceeds cap`);
  }
  const start = offset + HEADER_SIZE;
  if (start + payloadLen > buffer.length) {
    throw new RecordFormatError("truncated record payload");
  }
  const payload = buffer.subarray(start, start + payloadLen);

  const record: RawKernelRecord = {
    kind,
    ts,
    pid,
    ppid,
    comm,
    truncated: (flags & FLAG_TRUNCATED) !== 0,
  };
  switch (kind) {
    case RecordKind.Open: {
      if (payload.length < 4) {
        throw new RecordFormatError("open record payload too short");
      }
      record.openFlags = payload.readUInt32LE(0);
      const pathBytes = payload.subarray(4);
      if (pathBytes.length > MAX_PATH_BYTES) {
        throw new RecordFormatError("open record path exceeds cap");
      }
      record.path = pathBytes.toString("utf8");
      break;
    }
    case RecordKind.Exec: {
      const argv = decodeStrings(payload, 0, "argv");
      const env = decodeStrings(payload, argv.next, "env");
      if (env.next !== payload.length) {
        throw new RecordFormatError("exec record has trailing bytes");
      }
      record.argv = argv.values;
      record.env = env.values;
      break;
    }
    case RecordKind.Drop: {
      if (payload.length !== 4) {
        throw new RecordFormatError("drop record payload must be 4 bytes");
      }
      record.dropped = payload.readUInt32LE(0);
      break;
    }
    default:
      if (payload.length !== 0) {
        throw new RecordFormatError(`kind ${kind} record must have no payload`);
      }
  }
  return { record, next: start + payloadLen };
}

export function decodeStream(buffer: Buffer): RawKernelRecord[] {
  const records: RawKernelRecord[] = [];
  let offset = 0;
  while (offset < buffer.length) {
    const { record, next } = decodeRecord(buffer, offset);
    records.push(record);
    offset = next;
  }
  return records;
}

export function encodeStream(records: RawKernelRecord[]): Buffer {
  return Buffer.concat(records.map(encodeRecord));
}

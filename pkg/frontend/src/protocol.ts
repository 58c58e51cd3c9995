// Session protocol ("ams-proto/1"): JSON control messages plus binary AMSF
// frame payloads. This module owns parsing/encoding; it never touches the
// network.

export const PROTOCOL_VERSION = "ams-proto/1";
export const FRAME_MAGIC = 0x46534d41; // "AMSF" little-endian

export interface HelloMessage { type: "hello"; version: string; role?: string }
export interface TopologyMessage {
  type: "topology";
  strands: number[];
  version: number;
  frame: number;
}
export interface FrameHeaderMessage { type: "frame"; index: number; particles: number }
export interface AckMessage { type: "ack"; id: string }
export interface ErrorMessage { type: "error"; code: string; message: string; id?: string }

export type ServerMessage =
  | HelloMessage
  | TopologyMessage
  | FrameHeaderMessage
  | AckMessage
  | ErrorMessage;

export interface DecodedFrame {
  index: number;
  positions: Float32Array; // xyz triples, asset strand order
}

export function parseServerMessage(raw: string): ServerMessage {
  const msg = JSON.parse(raw);
  if (typeof msg !== "object" || msg === null || typeof msg.type !== "string") {
    throw new Error("malformed server message");
  }
  return msg as ServerMessage;
}

export function decodeFrame(buffer: ArrayBuffer): DecodedFrame {
  const view = new DataView(buffer);
  if (buffer.byteLength < 12 || view.getUint32(0, true) !== FRAME_MAGIC) {
    throw new Error("bad frame payload");
  }
  const index = view.getUint32(4, true);
  const count = view.getUint32(8, true);
  if (buffer.byteLength < 12 + 12 * count) {
    throw new Error("truncated frame payload");
  }
  return { index, positions: new Float32Array(buffer, 12, 3 * count) };
}

export function helloMessage(role: "editor" | "viewer"): string {
  return JSON.stringify({ type: "hello", version: PROTOCOL_VERSION, role });
}

export function trimEdit(id: string, strand: number, fraction: number): string {
  return JSON.stringify({
    type: "edit", id, op: "trim", args: { strand, fraction },
  });
}

export function grabEdit(id: string, strand: number, particle: number,
                         pos: [number, number, number], kappa = 50.0): string {
  return JSON.stringify({
    type: "edit", id, op: "grab", args: { strand, particle, pos, kappa },
  });
}

export function grabMoveEdit(id: string, pos: [number, number, number]): string {
  return JSON.stringify({ type: "edit", id, op: "grab_move", args: { pos } });
}

export function grabEndEdit(id: string): string {
  return JSON.stringify({ type: "edit", id, op: "grab_end", args: {} });
}

export function paramMessage(id: string, key: string, value: number): string {
  return JSON.stringify({ type: "param", id, key, value });
}

export function windEdit(id: string, force: [number, number, number]): string {
  return JSON.stringify({ type: "edit", id, op: "wind_set", args: { force } });
}

export function controlMessage(kind: "play" | "pause" | "reset"): string {
  return JSON.stringify({ type: kind });
}

// Splits a flat frame into per-strand polylines using the topology counts.
export function splitStrands(frame: DecodedFrame, counts: number[]): Float32Array[] {
  const out: Float32Array[] = [];
  let offset = 0;
  for (const n of counts) {
    out.push(frame.positions.subarray(3 * offset, 3 * (offset + n)));
    offset += n;
  }
  if (3 * offset !== frame.positions.length) {
    throw new Error(
      `frame particle count ${frame.positions.length / 3} does not match topology total ${offset}`);
  }
  return out;
}

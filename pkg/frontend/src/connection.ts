// WebSocket connection state machine: hello handshake, message dispatch,
// edit-id bookkeeping, reconnect with stream reset.

import {
  DecodedFrame,
  ServerMessage,
  decodeFrame,
  helloMessage,
  parseServerMessage,
} from "./protocol.js";

export interface ConnectionEvents {
  onHello?(version: string, role: string): void;
  onTopology?(strands: number[], version: number, frame: number): void;
  onFrame?(frame: DecodedFrame): void;
  onAck?(id: string): void;
  onError?(code: string, message: string, id?: string): void;
  onClose?(): void;
}

export class SessionConnection {
  private ws: WebSocket | null = null;
  private editCounter = 0;
  readonly events: ConnectionEvents;

  constructor(events: ConnectionEvents) {
    this.events = events;
  }

  connect(endpoint: string, role: "editor" | "viewer" = "editor"): void {
    const ws = new WebSocket(endpoint);
    ws.binaryType = "arraybuffer";
    this.ws = ws;
    ws.onopen = () => ws.send(helloMessage(role));
    ws.onmessage = (ev: MessageEvent) => {
      if (typeof ev.data === "string") {
        this.dispatch(parseServerMessage(ev.data));
      } else {
        this.events.onFrame?.(decodeFrame(ev.data as ArrayBuffer));
      }
    };
    ws.onclose = () => this.events.onClose?.();
  }

  private dispatch(msg: ServerMessage): void {
    switch (msg.type) {
      case "hello":
        this.events.onHello?.(msg.version, msg.role ?? "viewer");
        break;
      case "topology":
        this.events.onTopology?.(msg.strands, msg.version, msg.frame);
        break;
      case "frame":
        break; // header only; the binary payload follows and carries the data
      case "ack":
        this.events.onAck?.(msg.id);
        break;
      case "error":
        this.events.onError?.(msg.code, msg.message, msg.id);
        break;
    }
  }

  nextEditId(): string {
    this.editCounter += 1;
    return `ui${this.editCounter}`;
  }

  send(payload: string): void {
    if (this.ws !== null && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(payload);
    }
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
  }
}

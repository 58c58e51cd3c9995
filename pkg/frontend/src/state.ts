// Client-side scene view: topology, a latest-frame mailbox (older frames are
// discarded, never rendered out of order), the selection set, and pending
// edits awaiting their ack. The client never mutates simulation state
// locally; everything visible came from a server frame or ack.

import { DecodedFrame } from "./protocol.js";

export interface PendingEdit {
  id: string;
  op: string;
  sentAt: number;
}

export class ClientSceneView {
  strandCounts: number[] = [];
  topologyVersion = -1;
  latest: DecodedFrame | null = null;
  lastRendered = -1;
  selection = new Set<number>();
  pending = new Map<string, PendingEdit>();

  setTopology(counts: number[], version: number): void {
    this.strandCounts = counts.slice();
    this.topologyVersion = version;
    // stale frames from the previous topology must not be rendered
    this.latest = null;
    for (const id of [...this.selection]) {
      if (id >= counts.length) this.selection.delete(id);
    }
  }

  offerFrame(frame: DecodedFrame): boolean {
    if (frame.index <= this.lastRendered) return false; // out of order: drop
    const total = this.strandCounts.reduce((a, b) => a + b, 0);
    if (frame.positions.length !== 3 * total) return false; // topology lag
    this.latest = frame;
    return true;
  }

  /** Take the newest undrawn frame, marking it rendered. */
  takeFrame(): DecodedFrame | null {
    if (this.latest === null || this.latest.index <= this.lastRendered) {
      return null;
    }
    this.lastRendered = this.latest.index;
    return this.latest;
  }

  resetStream(): void {
    // reconnects resume from whatever frame the server is currently on
    this.lastRendered = -1;
    this.latest = null;
  }

  trackEdit(id: string, op: string, now: number): void {
    this.pending.set(id, { id, op, sentAt: now });
  }

  acknowledge(id: string): PendingEdit | undefined {
    const edit = this.pending.get(id);
    this.pending.delete(id);
    return edit;
  }

  toggleSelect(strand: number): void {
    if (strand < 0 || strand >= this.strandCounts.length) return;
    if (this.selection.has(strand)) this.selection.delete(strand);
    else this.selection.add(strand);
  }
}

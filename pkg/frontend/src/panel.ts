// Parameter sliders and transport buttons. Slider moves send one param
// message each; the slider reverts to the last acked value if the server
// rejects the change (round-trip authority).

import { SessionConnection } from "./connection.js";
import { controlMessage, paramMessage, windEdit } from "./protocol.js";

interface SliderSpec {
  key: string;
  label: string;
  min: number;
  max: number;
  step: number;
  initial: number;
}

const SLIDERS: SliderSpec[] = [
  { key: "kappa_edge", label: "edge stiffness", min: 0, max: 1e7, step: 1e4, initial: 1e6 },
  { key: "kappa_integrity", label: "integrity", min: 0, max: 1000, step: 1, initial: 100 },
  { key: "kappa_angular", label: "angular", min: 0, max: 1000, step: 1, initial: 100 },
  { key: "friction", label: "friction", min: 0, max: 1, step: 0.01, initial: 0.3 },
];

export class ParamPanel {
  private acked = new Map<string, number>();
  private inputs = new Map<string, HTMLInputElement>();
  private pendingParam = new Map<string, { key: string; value: number }>();
  playing = true;

  constructor(private conn: SessionConnection, root: HTMLElement,
              private onTransport?: (kind: string) => void) {
    for (const spec of SLIDERS) {
      const row = document.createElement("label");
      row.className = "param-row";
      row.textContent = spec.label;
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(spec.min);
      input.max = String(spec.max);
      input.step = String(spec.step);
      input.value = String(spec.initial);
      input.addEventListener("change", () => this.sendParam(spec.key, Number(input.value)));
      row.appendChild(input);
      root.appendChild(row);
      this.inputs.set(spec.key, input);
      this.acked.set(spec.key, spec.initial);
    }
    const windRow = document.createElement("label");
    windRow.className = "param-row";
    windRow.textContent = "wind x";
    const wind = document.createElement("input");
    wind.type = "range";
    wind.min = "-0.01";
    wind.max = "0.01";
    wind.step = "0.0005";
    wind.value = "0";
    wind.addEventListener("change", () => {
      const id = this.conn.nextEditId();
      this.conn.send(windEdit(id, [Number(wind.value), 0, 0]));
    });
    windRow.appendChild(wind);
    root.appendChild(windRow);

    for (const kind of ["play", "pause", "reset"] as const) {
      const btn = document.createElement("button");
      btn.textContent = kind;
      btn.addEventListener("click", () => {
        this.conn.send(controlMessage(kind));
        this.playing = kind !== "pause";
        this.onTransport?.(kind);
      });
      root.appendChild(btn);
    }
  }

  private sendParam(key: string, value: number): void {
    const id = this.conn.nextEditId();
    this.pendingParam.set(id, { key, value });
    this.conn.send(paramMessage(id, key, value));
  }

  handleAck(id: string): void {
    const p = this.pendingParam.get(id);
    if (p) {
      this.acked.set(p.key, p.value);
      this.pendingParam.delete(id);
    }
  }

  handleError(id?: string): void {
    if (!id) return;
    const p = this.pendingParam.get(id);
    if (p) {
      // revert the slider to the last acked value
      const input = this.inputs.get(p.key);
      if (input) input.value = String(this.acked.get(p.key) ?? 0);
      this.pendingParam.delete(id);
    }
  }
}

// Application glue: connect to the session endpoint (from ?ws=... or the
// default localhost port), render the latest frame each animation tick, and
// wire mouse picking to trim/grab edits.

import { OrbitCamera } from "./camera.js";
import { SessionConnection } from "./connection.js";
import { ParamPanel } from "./panel.js";
import { pickStrand, ProjectedStrand } from "./pick.js";
import { drawScene } from "./render.js";
import { splitStrands, trimEdit, grabEdit, grabMoveEdit, grabEndEdit } from "./protocol.js";
import { ClientSceneView } from "./state.js";

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const frameEl = document.getElementById("frame-counter")!;
const panelEl = document.getElementById("panel")!;

const endpoint = new URLSearchParams(location.search).get("ws")
  ?? "ws://127.0.0.1:8765/session";

const view = new ClientSceneView();
const camera = new OrbitCamera();
let projected: ProjectedStrand[] = [];
let mode: "trim" | "grab" = "trim";
let grabbing = false;

const conn = new SessionConnection({
  onHello: (version, role) => {
    statusEl.textContent = `connected (${version}, ${role})`;
    statusEl.className = "ok";
  },
  onTopology: (strands, version) => {
    view.setTopology(strands, version);
    statusEl.textContent = `connected: ${strands.length} strands`;
  },
  onFrame: (frame) => {
    view.offerFrame(frame);
  },
  onAck: (id) => {
    view.acknowledge(id);
    panel.handleAck(id);
  },
  onError: (code, message, id) => {
    panel.handleError(id);
    statusEl.textContent = `error [${code}] ${message}`;
    statusEl.className = "error-banner";
    if (id) view.acknowledge(id);
  },
  onClose: () => {
    statusEl.textContent = "disconnected, retrying in 2s";
    statusEl.className = "error-banner";
    view.resetStream();
    setTimeout(() => conn.connect(endpoint, "editor"), 2000);
  },
});

const panel = new ParamPanel(conn, panelEl);
conn.connect(endpoint, "editor");

const modeButton = document.getElementById("mode")!;
modeButton.addEventListener("click", () => {
  mode = mode === "trim" ? "grab" : "trim";
  modeButton.textContent = `mode: ${mode}`;
});

canvas.addEventListener("mousedown", (ev) => {
  if (ev.button !== 0 || ev.shiftKey) return;
  const rect = canvas.getBoundingClientRect();
  const click = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  const hit = pickStrand(click, projected);
  if (hit === null) return; // empty space: no edit
  view.toggleSelect(hit.strand);
  const id = conn.nextEditId();
  if (mode === "trim") {
    view.trackEdit(id, "trim", performance.now());
    conn.send(trimEdit(id, hit.strand, hit.fraction));
  } else {
    const w = projected.find((p) => p.strand === hit.strand)!.world;
    const pos: [number, number, number] = [
      w[3 * hit.vertex], w[3 * hit.vertex + 1], w[3 * hit.vertex + 2]];
    view.trackEdit(id, "grab", performance.now());
    conn.send(grabEdit(id, hit.strand, hit.vertex, pos));
    grabbing = true;
  }
});

canvas.addEventListener("mousemove", (ev) => {
  const rect = canvas.getBoundingClientRect();
  if (grabbing) {
    // stream handle positions while dragging: unproject the cursor onto a
    // camera-facing plane through the target
    const depth = camera.distance;
    const fx = (ev.clientX - rect.left - canvas.width / 2) / canvas.height;
    const fy = (canvas.height / 2 - (ev.clientY - rect.top)) / canvas.height;
    const spread = 2 * Math.tan(camera.fov / 2) * depth;
    const pos: [number, number, number] = [
      camera.target[0] + fx * spread,
      camera.target[1] + fy * spread,
      camera.target[2]];
    conn.send(grabMoveEdit(conn.nextEditId(), pos));
  } else if (ev.buttons === 1 && ev.shiftKey) {
    camera.orbit(ev.movementX, ev.movementY);
  }
});

canvas.addEventListener("mouseup", () => {
  if (grabbing) {
    conn.send(grabEndEdit(conn.nextEditId()));
    grabbing = false;
  }
});

canvas.addEventListener("wheel", (ev) => {
  camera.zoom(ev.deltaY > 0 ? 1.1 : 0.9);
  ev.preventDefault();
});

function tick(): void {
  const frame = view.takeFrame();
  if (frame !== null) {
    const strands = splitStrands(frame, view.strandCounts);
    projected = drawScene(ctx, camera, strands, view.selection,
                          canvas.width, canvas.height);
    frameEl.textContent = `frame ${frame.index}`;
  }
  requestAnimationFrame(tick);
}
requestAnimationFrame(tick);

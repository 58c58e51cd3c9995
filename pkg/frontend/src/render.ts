// Canvas 2D polyline renderer with per-strand color hashing.

import { OrbitCamera } from "./camera.js";
import { ProjectedStrand } from "./pick.js";

export function strandColor(index: number, selected: boolean): string {
  // integer hash -> hue; selection renders warm white
  if (selected) return "#fff2cc";
  let h = index * 2654435761;
  h = (h ^ (h >> 16)) >>> 0;
  return `hsl(${h % 360}, 65%, ${45 + (h % 25)}%)`;
}

export function drawScene(ctx: CanvasRenderingContext2D, camera: OrbitCamera,
                          strands: Float32Array[], selection: Set<number>,
                          width: number, height: number): ProjectedStrand[] {
  ctx.fillStyle = "#10131a";
  ctx.fillRect(0, 0, width, height);
  const projected: ProjectedStrand[] = [];
  for (let s = 0; s < strands.length; s++) {
    const world = strands[s];
    const n = world.length / 3;
    const pts = [];
    let anyVisible = false;
    for (let i = 0; i < n; i++) {
      const pr = camera.project([world[3 * i], world[3 * i + 1], world[3 * i + 2]],
                                width, height);
      pts.push({ x: pr.x, y: pr.y });
      anyVisible = anyVisible || pr.visible;
    }
    if (!anyVisible) continue;
    ctx.strokeStyle = strandColor(s, selection.has(s));
    ctx.lineWidth = selection.has(s) ? 2.5 : 1.25;
    ctx.beginPath();
    ctx.moveTo(pts[0].x, pts[0].y);
    for (let i = 1; i < n; i++) ctx.lineTo(pts[i].x, pts[i].y);
    ctx.stroke();
    projected.push({ strand: s, points: pts, world });
  }
  return projected;
}

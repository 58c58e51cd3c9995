// Screen-space picking against rendered polylines: distance from the click
// to each projected segment, returning the strand, the nearest vertex, and
// the arc-length fraction at that vertex (what a trim edit wants).

export interface ScreenPoint { x: number; y: number }

export interface PickResult {
  strand: number;
  vertex: number;
  fraction: number;       // arc-length fraction of the clicked vertex
  distance: number;       // screen pixels
}

export interface ProjectedStrand {
  strand: number;
  points: ScreenPoint[];  // projected polyline vertices (visible ones)
  world: Float32Array;    // xyz triples, for arc length
}

export function arcLengthFraction(world: Float32Array, vertex: number): number {
  const n = world.length / 3;
  if (n < 2) return 1;
  let total = 0;
  let at = 0;
  for (let i = 1; i < n; i++) {
    const d = Math.hypot(
      world[3 * i] - world[3 * (i - 1)],
      world[3 * i + 1] - world[3 * (i - 1) + 1],
      world[3 * i + 2] - world[3 * (i - 1) + 2]);
    total += d;
    if (i <= vertex) at += d;
  }
  return total > 0 ? at / total : 1;
}

function segmentDistance(p: ScreenPoint, a: ScreenPoint, b: ScreenPoint): { d: number; t: number } {
  const vx = b.x - a.x;
  const vy = b.y - a.y;
  const wx = p.x - a.x;
  const wy = p.y - a.y;
  const len2 = vx * vx + vy * vy;
  const t = len2 > 0 ? Math.min(1, Math.max(0, (wx * vx + wy * vy) / len2)) : 0;
  const dx = wx - t * vx;
  const dy = wy - t * vy;
  return { d: Math.hypot(dx, dy), t };
}

/**
 * Nearest strand within `threshold` screen pixels of the click, or null when
 * the click lands on empty space (no edit is sent in that case).
 */
export function pickStrand(click: ScreenPoint, strands: ProjectedStrand[],
                           threshold = 8): PickResult | null {
  let best: PickResult | null = null;
  for (const s of strands) {
    for (let i = 0; i + 1 < s.points.length; i++) {
      const { d, t } = segmentDistance(click, s.points[i], s.points[i + 1]);
      if (d <= threshold && (best === null || d < best.distance)) {
        const vertex = t > 0.5 ? i + 1 : i;
        best = {
          strand: s.strand,
          vertex,
          fraction: arcLengthFraction(s.world, vertex),
          distance: d,
        };
      }
    }
  }
  return best;
}

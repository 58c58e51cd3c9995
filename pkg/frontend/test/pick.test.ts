import { describe, expect, it } from "vitest";

import { arcLengthFraction, pickStrand, ProjectedStrand } from "../src/pick.js";

function straightStrand(strand: number, y: number, n = 5): ProjectedStrand {
  const points = [];
  const world = new Float32Array(3 * n);
  for (let i = 0; i < n; i++) {
    points.push({ x: 100 + i * 50, y });
    world[3 * i] = i * 0.01; // uniform segments along x
  }
  return { strand, points, world };
}

describe("picking", () => {
  it("click on empty space returns null (no edit sent)", () => {
    const hit = pickStrand({ x: 500, y: 500 }, [straightStrand(0, 100)]);
    expect(hit).toBeNull();
  });

  it("picks the nearest strand and vertex", () => {
    const a = straightStrand(0, 100);
    const b = straightStrand(1, 130);
    const hit = pickStrand({ x: 205, y: 126 }, [a, b]);
    expect(hit).not.toBeNull();
    expect(hit!.strand).toBe(1);
    expect(hit!.vertex).toBe(2); // closest projected vertex
  });

  it("arc-length fraction comes from the clicked vertex", () => {
    const s = straightStrand(0, 100, 5); // 4 uniform segments
    expect(arcLengthFraction(s.world, 0)).toBeCloseTo(0.0, 12);
    expect(arcLengthFraction(s.world, 2)).toBeCloseTo(0.5, 12);
    expect(arcLengthFraction(s.world, 4)).toBeCloseTo(1.0, 12);
    const hit = pickStrand({ x: 200, y: 101 }, [s]);
    expect(hit!.fraction).toBeCloseTo(0.5, 12);
  });

  it("respects the screen-space threshold", () => {
    const s = straightStrand(0, 100);
    expect(pickStrand({ x: 200, y: 112 }, [s], 8)).toBeNull();
    expect(pickStrand({ x: 200, y: 106 }, [s], 8)).not.toBeNull();
  });
});

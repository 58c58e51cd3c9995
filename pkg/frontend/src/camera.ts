// Orbit camera with a simple perspective projection onto canvas pixels.

export interface Projected {
  x: number;
  y: number;
  depth: number;
  visible: boolean;
}

export class OrbitCamera {
  yaw = 0.6;
  pitch = 0.25;
  distance = 1.2;
  target: [number, number, number] = [0, -0.25, 0];
  fov = Math.PI / 4;

  eye(): [number, number, number] {
    const cp = Math.cos(this.pitch);
    return [
      this.target[0] + this.distance * cp * Math.sin(this.yaw),
      this.target[1] + this.distance * Math.sin(this.pitch),
      this.target[2] + this.distance * cp * Math.cos(this.yaw),
    ];
  }

  orbit(dx: number, dy: number): void {
    this.yaw -= dx * 0.01;
    this.pitch = Math.min(1.5, Math.max(-1.5, this.pitch + dy * 0.01));
  }

  zoom(factor: number): void {
    this.distance = Math.min(20, Math.max(0.05, this.distance * factor));
  }

  /** World point -> canvas pixel (origin top-left). */
  project(p: [number, number, number], width: number, height: number): Projected {
    const eye = this.eye();
    const fwd = norm3(sub3(this.target, eye));
    const right = norm3(cross3(fwd, [0, 1, 0]));
    const up = cross3(right, fwd);
    const rel = sub3(p, eye);
    const z = dot3(rel, fwd);
    if (z <= 1e-6) return { x: 0, y: 0, depth: z, visible: false };
    const f = height / (2 * Math.tan(this.fov / 2));
    return {
      x: width / 2 + (dot3(rel, right) * f) / z,
      y: height / 2 - (dot3(rel, up) * f) / z,
      depth: z,
      visible: true,
    };
  }
}

export function sub3(a: ArrayLike<number>, b: ArrayLike<number>): [number, number, number] {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function dot3(a: ArrayLike<number>, b: ArrayLike<number>): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function cross3(a: ArrayLike<number>, b: ArrayLike<number>): [number, number, number] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm3(a: [number, number, number]): [number, number, number] {
  const n = Math.hypot(a[0], a[1], a[2]) || 1;
  return [a[0] / n, a[1] / n, a[2] / n];
}

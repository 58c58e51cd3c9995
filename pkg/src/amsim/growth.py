"""Procedural strand growth on a scalp mesh region.

Roots are sampled uniformly in barycentric coordinates over selected
triangles; directions come from barycentric-weighted vertex normals plus
uniform noise. Growth accumulates an unnormalized direction with a gravity
pull (linear in the step index) and a helix attractor, normalizing only when
stepping positions, so every segment has length exactly step_size.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .assets import Mesh, StrandAsset


class GrowthError(ValueError):
    pass


@dataclass
class GrowthParams:
    roots_per_triangle: int = 4       # p_n
    max_deviation: float = 0.2        # p_Gamma, clamp on the gravity factor
    gravity_influence: float = 0.05   # p_gamma
    spiral_impact: float = 0.017      # p_Omega
    helix_radius: float = 1.0         # p_h
    helix_frequency: float = 1.0      # p_freq
    step_size: float = 0.01           # p_tau, meters
    vertex_count: int = 16
    noise_scale: float = 0.35         # amplitude of the root-direction noise
    seed: int = 0

    def __post_init__(self):
        if self.roots_per_triangle < 1:
            raise GrowthError("roots_per_triangle must be >= 1")
        if self.step_size <= 0.0:
            raise GrowthError("step_size must be positive")
        if self.vertex_count < 2:
            raise GrowthError("vertex_count must be >= 2")


def helix_vector(i: int, params: GrowthParams) -> np.ndarray:
    return np.array([params.helix_radius * np.cos(i * params.helix_frequency),
                     1.0,
                     params.helix_radius * np.sin(i * params.helix_frequency)])


def sample_roots(mesh: Mesh, region, params: GrowthParams):
    """Sample roots_per_triangle random roots on each region triangle.

    Returns (roots (k,3), directions (k,3), skipped_degenerate). Determinism:
    every root draws from its own (seed, triangle, sample) stream, so results
    do not depend on scheduling or triangle order.
    """
    region = list(region)
    if not region:
        raise GrowthError("empty region")
    normals = mesh.vertex_normals()
    areas = mesh.triangle_areas()
    roots = []
    dirs = []
    skipped = 0
    for tri in region:
        if tri < 0 or tri >= mesh.faces.shape[0]:
            raise GrowthError(f"triangle id {tri} out of range")
        if areas[tri] < 1e-12:
            skipped += 1
            continue
        ia, ib, ic = mesh.faces[tri]
        va, vb, vc = mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]
        na, nb, nc = normals[ia], normals[ib], normals[ic]
        for k in range(params.roots_per_triangle):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=(params.seed, int(tri), k)))
            while True:
                u, v = rng.uniform(0.0, 1.0, 2)
                if u + v > 1.0:
                    u, v = 1.0 - u, 1.0 - v
                w = 1.0 - u - v
                if min(u, v, w) > 1e-9:  # strictly interior
                    break
            roots.append(w * va + u * vb + v * vc)
            noise = rng.uniform(-1.0, 1.0, 3) * params.noise_scale
            d = w * na + u * nb + v * nc + noise
            norm = np.linalg.norm(d)
            if norm < 1e-12:
                d = na
                norm = np.linalg.norm(d)
            dirs.append(d / norm)
    if not roots:
        raise GrowthError("all region triangles degenerate")
    return np.array(roots), np.array(dirs), skipped


def grow_strand(root, initial_direction, params: GrowthParams) -> np.ndarray:
    """Grow one strand polyline from a root.

    Direction update per vertex i: pull toward gravity scaled by
    max(max_deviation, 1 - |dir_y|), then the spiral update toward the helix
    vector; positions step by step_size along the normalized direction.
    """
    up = np.array([0.0, 1.0, 0.0])
    x = np.asarray(root, dtype=np.float64).copy()
    p_dir = np.asarray(initial_direction, dtype=np.float64).copy()
    pts = [x.copy()]
    for i in range(1, params.vertex_count):
        grav_prev = np.array([0.0, -(i - 1) * params.gravity_influence, 0.0])
        factor = max(params.max_deviation, 1.0 - abs(float(np.dot(p_dir, up))))
        p_prime = p_dir + grav_prev * factor
        p_dir = p_prime + params.spiral_impact * (p_prime - helix_vector(i, params))
        norm = np.linalg.norm(p_dir)
        if norm < 1e-12:
            break  # direction collapsed; truncate
        x = x + params.step_size * (p_dir / norm)
        pts.append(x.copy())
    while len(pts) < 2:  # min 2 vertices even on immediate collapse
        pts.append(pts[-1] + params.step_size * np.array([0.0, 1.0, 0.0]))
    return np.array(pts)


def grow(mesh: Mesh, region, params: GrowthParams) -> StrandAsset:
    roots, dirs, _ = sample_roots(mesh, region, params)
    polylines = [grow_strand(r, d, params) for r, d in zip(roots, dirs)]
    return StrandAsset.from_polylines(polylines)


def parameter_sweep(mesh: Mesh, region, base: GrowthParams,
                    axis1: tuple, axis2: tuple, out_dir) -> list:
    """Generate one asset per (axis1, axis2) value pair.

    Each axis is (param_name, values). Writes assets plus a manifest.json
    listing the parameters of every asset; returns the manifest entries.
    """
    name1, values1 = axis1
    name2, values2 = axis2
    if len(values1) == 0 or len(values2) == 0:
        raise GrowthError("sweep axes must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for a, v1 in enumerate(values1):
        for b, v2 in enumerate(values2):
            cfg = asdict(base)
            cfg[name1] = v1
            cfg[name2] = v2
            params = GrowthParams(**cfg)
            asset = grow(mesh, region, params)
            from .assets import save_strands

            name = f"sweep_{name1}{a}_{name2}{b}.strands"
            save_strands(asset, out_dir / name)
            manifest.append({"file": name, name1: v1, name2: v2,
                             "strands": asset.strand_count,
                             "seed": base.seed})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest

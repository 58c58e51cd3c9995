"""Solver and full-step timing harness.

Each row times assembly and the banded solve for a (strand count, particles
per strand) pair and cross-checks one system against the dense LU oracle.
``compare_backends`` re-runs the same grid in a subprocess with the numpy
fallback forced, so both paths appear side by side.
"""

import os
import subprocess
import sys
import time

import numpy as np

from . import solver
from .backend import backend_name
from .runtime import Simulation
from .scene import GridConfig, SceneConfig, StageToggles, WindField
from .assets import StrandAsset
from .strand import SimParams
from .transforms import TransformTrack

CSV_HEADER = ("backend,strands,particles,assemble_ms,solve_ms,step_ms,"
              "fps,residual")


def _helix(n, radius=0.03, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 6.0 * np.pi, n)
    jitter = rng.normal(0, 1e-4, (n, 3))
    return np.stack([radius * np.cos(t), -0.004 * t, radius * np.sin(t)], axis=1) + jitter


def bench_row(strands: int, particles: int, frames: int = 20, grid_res: int = 32,
              seed: int = 0):
    polys = [_helix(particles, radius=0.02 + 0.0005 * (k % 7), seed=seed + k)
             for k in range(strands)]
    params = SimParams(kappa_edge=1e6, kappa_integrity=1e2, kappa_angular=1e2,
                       damping=0.5, dt=1.0 / 360.0, substeps=1, strand_mass=0.01)
    cfg = SceneConfig(asset=StrandAsset.from_polylines(polys), params=params,
                      grid=GridConfig(resolution=(grid_res, grid_res, grid_res)),
                      head_track=TransformTrack.static_track(),
                      wind=WindField(), stages=StageToggles(collisions=False))
    sim = Simulation(cfg)
    sim.step()  # warm the kernels before timing

    from .strand import GhostConfig, SpringNetwork, Strand, StrandState

    rest = polys[0]
    strand = Strand(rest, np.full(particles, params.strand_mass / particles),
                    SpringNetwork.chain(rest, params.kappa_edge))
    state = StrandState.at_rest(strand)
    ghosts = GhostConfig.from_rest(strand)
    forces = np.outer(strand.masses, params.gravity)

    reps = max(1, 2000 // particles)
    t0 = time.perf_counter()
    for _ in range(reps):
        system = solver.assemble(strand, state, ghosts, params, forces,
                                 params.dt, root_velocity=np.zeros(3))
    assemble_ms = (time.perf_counter() - t0) / reps * 1e3

    t0 = time.perf_counter()
    for _ in range(reps):
        v = solver.solve_banded(system)
    solve_ms = (time.perf_counter() - t0) / reps * 1e3

    dense = np.linalg.solve(system.to_dense(), system.rhs.reshape(-1)).reshape(-1, 3)
    scale = max(float(np.abs(dense).max()), 1e-300)
    residual = float(np.abs(v - dense).max() / scale)

    t0 = time.perf_counter()
    for _ in range(frames):
        sim.step()
    step_ms = (time.perf_counter() - t0) / frames * 1e3
    fps = 1e3 / step_ms if step_ms > 0 else float("inf")
    return {"backend": backend_name(), "strands": strands, "particles": particles,
            "assemble_ms": assemble_ms, "solve_ms": solve_ms,
            "step_ms": step_ms, "fps": fps, "residual": residual}


def rows_to_csv(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(f"{r['backend']},{r['strands']},{r['particles']},"
                     f"{r['assemble_ms']:.4f},{r['solve_ms']:.4f},"
                     f"{r['step_ms']:.3f},{r['fps']:.1f},{r['residual']:.3e}")
    return "\n".join(lines) + "\n"


def run_bench(strand_counts, particle_counts, frames=20, grid_res=32, seed=0):
    return [bench_row(s, p, frames, grid_res, seed)
            for s in strand_counts for p in particle_counts]


def compare_backends(strand_counts, particle_counts, frames=20, grid_res=32):
    """Current backend plus a numpy-fallback subprocess run, merged."""
    rows = run_bench(strand_counts, particle_counts, frames, grid_res)
    env = dict(os.environ, AMSIM_PURE_NUMPY="1")
    args = [sys.executable, "-m", "amsim.cli", "bench",
            "--strands", ",".join(map(str, strand_counts)),
            "--particles", ",".join(map(str, particle_counts)),
            "--frames", str(frames), "--grid", str(grid_res)]
    out = subprocess.run(args, capture_output=True, text=True, env=env, check=True)
    fallback_lines = [ln for ln in out.stdout.strip().splitlines()[1:] if ln]
    return rows_to_csv(rows).rstrip() + "\n" + "\n".join(fallback_lines) + "\n"

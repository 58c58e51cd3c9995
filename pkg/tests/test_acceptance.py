"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line (run with -s to see them live; they also land in acceptance_report.txt).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from amsim.assets import StrandAsset, icosphere, save_strands
from amsim.runtime import Simulation
from amsim.scene import GridConfig, SceneConfig, StageToggles, WindField
from amsim.sdf import build_sdf, collide_position, collide_velocity
from amsim.solver import (
    BandedSystem,
    SolverError,
    assemble,
    assemble_plain_ms,
    solve_banded,
)
from amsim.strand import (
    GhostConfig,
    SimParams,
    SpringNetwork,
    Strand,
    StrandState,
    local_spring_forces,
    total_forces,
)
from amsim.transforms import TransformTrack

REPORT_PATH = Path(__file__).parent / "acceptance_report.txt"
_report_lines = []


def report(number, name, ok, detail=""):
    line = f"ACCEPTANCE {number:>2} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    _report_lines.append(line)
    REPORT_PATH.write_text("\n".join(_report_lines) + "\n")
    assert ok, line


# --- shared scene builders ----------------------------------------------------

def wisp_polylines(strands=480, n=30, seed=0):
    rng = np.random.default_rng(seed)
    polys = []
    for k in range(strands):
        radius = 0.025 + rng.uniform(-0.004, 0.004)
        phase = rng.uniform(0, 2 * np.pi)
        root = np.array([rng.uniform(-0.02, 0.02), 0.0, rng.uniform(-0.02, 0.02)])
        t = np.linspace(0, 5 * np.pi, n)
        pts = np.stack([root[0] + radius * np.cos(t + phase) - radius * np.cos(phase),
                        -0.018 * t,
                        root[2] + radius * np.sin(t + phase) - radius * np.sin(phase)],
                       axis=1)
        polys.append(pts)
    return polys


def shake_track():
    tt = np.arange(0, 241) * (1 / 24)
    return TransformTrack(
        times=tt,
        translations=[[0.25 * np.sin(18 * t), 0.05 * np.sin(11 * t),
                       0.2 * np.cos(13 * t)] for t in tt],
        rotations=[[1, 0, 0, 0]] * len(tt))


def wisp_config(kappa_angular):
    params = SimParams(kappa_edge=1e6, kappa_integrity=0.0,
                       kappa_angular=kappa_angular, damping=0.05,
                       dt=1 / 120, substeps=1, strand_mass=2e-5, preload=False)
    return SceneConfig(
        asset=StrandAsset.from_polylines(wisp_polylines()),
        params=params,
        grid=GridConfig(resolution=(32, 32, 32),
                        bounds_lo=np.array([-1.0, -1.4, -1.0]),
                        bounds_hi=np.array([1.0, 0.6, 1.0]),
                        friction_strength=0.2,
                        pair_radius=0.002, pair_stiffness=0.3),
        head_track=shake_track(), wind=WindField(),
        stages=StageToggles(collisions=False))


def cantilever(n=30, length=0.3):
    rest = np.zeros((n, 3))
    rest[:, 0] = np.linspace(0.0, length, n)
    return rest


def helix(n=30):
    t = np.linspace(0, 6 * np.pi, n)
    return np.stack([0.04 * np.cos(t), -0.012 * t, 0.04 * np.sin(t)], axis=1)


def single_strand_sim(rest, params):
    cfg = SceneConfig(asset=StrandAsset.from_polylines([rest]), params=params,
                      grid=GridConfig(resolution=(8, 8, 8)),
                      head_track=TransformTrack.static_track(), wind=WindField(),
                      stages=StageToggles(collisions=False, grid=False,
                                          pairwise=False))
    return Simulation(cfg)


@pytest.fixture(scope="module")
def stable_wisp_run():
    """Criterion 4's stable run, shared with criterion 8."""
    sim = Simulation(wisp_config(kappa_angular=1e2))
    strains = []
    for _ in range(600):
        diag = sim.step()
        strains.append(diag["max_strain"])
    return np.array(strains)


# --- criteria -------------------------------------------------------------------

def test_criterion_1_solver_oracle_equivalence():
    rng = np.random.default_rng(2024)

    def random_system(n):
        sys_ = BandedSystem.zeros(n)
        diag = np.array([np.eye(3) * (1.0 + rng.uniform(0, 0.5)) for _ in range(n)])
        dt = 1e-3
        mass = 5e-4
        for off in (1, 2, 3):
            for i in range(n - off):
                j = i + off
                u = rng.normal(0, 1, 3)
                u /= np.linalg.norm(u)
                d = np.outer(u, u)
                c = dt * dt * 1e6 * rng.uniform(0.1, 1.0) / mass
                sys_.bands[3 + off, i] = -c * d
                sys_.bands[3 - off, j] = -c * d
                diag[i] += c * d
                diag[j] += c * d
        for i in range(n):
            sys_.bands[3, i] = diag[i]
        sys_.rhs = rng.normal(0, 1, (n, 3))
        return sys_

    sizes = rng.integers(2, 129, size=200)
    systems = [random_system(int(n)) for n in sizes]
    solve_banded(systems[0])  # warm the jit once; the gate times the solves
    t0 = time.perf_counter()
    solutions = [solve_banded(s) for s in systems]
    elapsed = time.perf_counter() - t0
    worst = 0.0
    worst_resid = 0.0
    for s, v in zip(systems, solutions):
        want = np.linalg.solve(s.to_dense(), s.rhs.reshape(-1)).reshape(-1, 3)
        scale = max(np.abs(want).max(), 1e-300)
        worst = max(worst, float(np.abs(v - want).max() / scale))
        # residual contract: ||Av - b||_inf <= 1e-9 max(1, ||b||_inf)
        resid = s.residual(v) / max(1.0, float(np.abs(s.rhs).max()))
        worst_resid = max(worst_resid, resid)
    ok = worst <= 1e-9 and worst_resid <= 1e-9 and elapsed < 5.0
    report(1, "solver oracle equivalence", ok,
           f"200 systems, max rel err {worst:.2e}, max residual {worst_resid:.2e}, "
           f"solve time {elapsed:.2f}s")


def test_criterion_2_ms_reduction_bit_identical():
    rng = np.random.default_rng(7)
    ok = True
    for trial in range(20):
        n = int(rng.integers(4, 40))
        rest = np.cumsum(rng.uniform(0.005, 0.02, (n, 3)), axis=0)
        s = Strand(rest, np.full(n, 1e-4), SpringNetwork.chain(rest, 1e6))
        params = SimParams(kappa_edge=1e6, kappa_integrity=0.0, kappa_angular=0.0,
                           damping=0.5, dt=1e-3, strand_mass=0.01)
        state = StrandState(rest + rng.normal(0, 1e-3, (n, 3)),
                            rng.normal(0, 0.1, (n, 3)), None)
        ghosts = GhostConfig.from_rest(s)
        forces = rng.normal(0, 1e-3, (n, 3))
        rv = rng.normal(0, 0.1, 3)
        ams = assemble(s, state, ghosts, params, forces, params.dt, root_velocity=rv)
        ms = assemble_plain_ms(s, state, params, forces, params.dt, root_velocity=rv)
        ok &= np.array_equal(ams.bands, ms.bands) and np.array_equal(ams.rhs, ms.rhs)
        f_total = total_forces(s, state, ghosts, params)
        f_local = local_spring_forces(state, s.springs)
        ok &= np.array_equal(f_total, f_local)
    report(2, "MS reduction bit-identical", ok, "20 random strands")


def test_criterion_3_sag_free_initialization():
    length = 0.3

    def run(preload):
        params = SimParams(kappa_edge=1e6, kappa_integrity=1e2, kappa_angular=1e2,
                           damping=0.5, dt=1 / 360, substeps=1, strand_mass=0.01,
                           preload=preload)
        sim = single_strand_sim(cantilever(30, length), params)
        start = sim.positions_flat().copy()
        for _ in range(1000):
            sim.step()
        return float(np.linalg.norm(sim.positions_flat() - start, axis=1).max())

    d_pre = run(True)
    d_nopre = run(False)
    ok = d_pre < 0.01 * length and d_nopre > d_pre
    report(3, "sag-free initialization", ok,
           f"preloaded max displacement {d_pre:.2e} m "
           f"({100 * d_pre / length:.4f}% of L), without preload {d_nopre:.2e} m")


def test_criterion_4_stability_ablation(stable_wisp_run):
    # stable case already ran 600 frames without tripping (fixture); now the
    # kappa_angular = 0 twin with identical settings must trip the detector
    assert stable_wisp_run.shape[0] == 600
    sim = Simulation(wisp_config(kappa_angular=0.0))
    tripped_at = None
    try:
        for k in range(600):
            sim.step()
    except SolverError:
        tripped_at = sim.frame
    ok = tripped_at is not None
    report(4, "stability ablation (angular coupling)", ok,
           f"kappa_ang=1e2 stable 600 frames; kappa_ang=0 tripped at frame {tripped_at}")


def test_criterion_5_global_feature_retention():
    rest = helix(30)
    length = float(np.linalg.norm(np.diff(rest, axis=0), axis=1).sum())

    def run(kappa_integrity):
        params = SimParams(kappa_edge=1e7, kappa_integrity=kappa_integrity,
                           kappa_angular=0.0, damping=0.5, dt=1 / 360,
                           substeps=1, strand_mass=0.01, preload=False)
        sim = single_strand_sim(rest, params)
        start = sim.positions_flat().copy()
        for _ in range(300):
            sim.step()
        return float(np.linalg.norm(sim.positions_flat() - start, axis=1).mean())

    dev_int = run(1e2)
    dev_noint = run(0.0)
    ok = dev_int < 0.05 * length and dev_noint > dev_int
    report(5, "global feature retention (integrity coupling)", ok,
           f"kappa_int=1e2 mean dev {100 * dev_int / length:.3f}% of L, "
           f"kappa_int=0 dev {100 * dev_noint / length:.1f}%")


def test_criterion_6_collision_guarantee():
    sdf = build_sdf(icosphere(3, radius=1.0), resolution=40, padding=0.4)
    h = sdf.cell_size
    rng = np.random.default_rng(99)
    k = 10_000
    dirs = rng.normal(0, 1, (k, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    # random particles outside driven straight into the sphere
    x = dirs * rng.uniform(1.05, 1.5, k)[:, None]
    v = -x * rng.uniform(5.0, 40.0, k)[:, None]
    dt = 0.02

    v0 = collide_velocity(x, v, dt, sdf, mu=0.0)
    x0 = collide_position(x, v0, dt, sdf)
    sigma = sdf.distance(x0)
    non_penetration = float(sigma.min()) >= -2 * h

    # mu = 0 preserves tangential relative speed
    n = sdf.normal(x + dt * v)
    v_t = v - np.einsum("ij,ij->i", v, n)[:, None] * n
    out_t = v0 - np.einsum("ij,ij->i", v0, n)[:, None] * n
    tangential_preserved = float(np.abs(np.linalg.norm(out_t, axis=1)
                                        - np.linalg.norm(v_t, axis=1)).max()) <= 1e-6

    speeds = []
    for mu in (0.0, 0.25, 0.5, 1.0):
        vm = collide_velocity(x, v, dt, sdf, mu=mu)
        t_part = vm - np.einsum("ij,ij->i", vm, n)[:, None] * n
        speeds.append(np.linalg.norm(t_part, axis=1))
    monotone = all(np.all(b <= a + 1e-12) for a, b in zip(speeds, speeds[1:]))

    ok = non_penetration and tangential_preserved and monotone
    report(6, "collision guarantee", ok,
           f"min sigma {sigma.min():.3e} >= {-2 * h:.3e}, tangential drift <= 1e-6, "
           f"friction monotone over mu in 0..1")


def test_criterion_7_grid_transfer_properties():
    from amsim.grid import EulerianGrid, grid_regularize, rasterize, transfer_back

    rng = np.random.default_rng(5)
    grid = EulerianGrid((16, 16, 16), origin=np.array([0.0, 0.0, 0.0]),
                        cell_size=0.05)
    pts = rng.uniform(0.1, 0.7, (500, 3))
    ms = rng.uniform(1e-4, 1e-2, 500)

    # constant field is a pipeline fixed point for any blend
    v0 = np.array([0.7, -0.4, 0.2])
    vel = np.tile(v0, (500, 1))
    fixed_point = True
    for alpha in (0.0, 0.5, 0.95, 1.0):
        rasterize(grid, pts, vel, ms)
        before = grid.copy_fields()
        grid_regularize(grid, 1.0, iterations=3)
        out = transfer_back(before, grid, pts, vel, alpha)
        fixed_point &= bool(np.abs(out - vel).max() <= 1e-6)

    # momentum conservation through rasterize and regularize
    vel_r = rng.normal(0, 2, (500, 3))
    rasterize(grid, pts, vel_r, ms)
    want = (ms[:, None] * vel_r).sum(axis=0)
    conserve_r = bool(np.abs(grid.total_momentum() - want).max()
                      <= 1e-6 * max(1.0, np.abs(want).max()))
    grid_regularize(grid, 0.8, iterations=4)
    conserve_d = bool(np.abs(grid.total_momentum() - want).max()
                      <= 1e-6 * max(1.0, np.abs(want).max()))

    # worker-count independence of the full pipeline, bit-identical frames
    polys = wisp_polylines(strands=24)
    params = SimParams(kappa_edge=1e5, kappa_integrity=10.0, kappa_angular=10.0,
                       damping=0.5, dt=1 / 240, substeps=1, strand_mass=1e-3)

    def run(threads):
        cfg = SceneConfig(asset=StrandAsset.from_polylines(polys), params=params,
                          grid=GridConfig(resolution=(16, 16, 16),
                                          bounds_lo=np.array([-0.6, -1.0, -0.6]),
                                          bounds_hi=np.array([0.6, 0.4, 0.6])),
                          head_track=TransformTrack.static_track(),
                          wind=WindField(), stages=StageToggles(collisions=False))
        sim = Simulation(cfg)
        for _ in range(5):
            sim.step(threads=threads)
        return sim.positions_flat()

    identical = bool(np.array_equal(run(1), run(4)))
    ok = fixed_point and conserve_r and conserve_d and identical
    report(7, "grid transfer properties", ok,
           f"fixed point {fixed_point}, momentum {conserve_r and conserve_d}, "
           f"worker-count bit-identical {identical}")


def test_criterion_8_inextensibility(stable_wisp_run):
    worst = float(stable_wisp_run.max())
    ok = worst <= 1e-3
    report(8, "inextensibility every frame", ok,
           f"max relative edge strain over 600 frames {worst:.2e}")


def test_criterion_9_determinism_cli(tmp_path):
    from amsim.cli import main

    asset = StrandAsset.from_polylines(wisp_polylines(strands=16, n=12, seed=3))
    save_strands(asset, tmp_path / "wisp.strands")
    doc = {"version": 1, "strands": "wisp.strands",
           "params": {"kappa_edge": 1e5, "kappa_integrity": 20.0,
                      "kappa_angular": 10.0, "damping": 0.5, "dt": 1 / 240,
                      "substeps": 2, "strand_mass": 1e-3},
           "grid": {"resolution": [12, 12, 12]},
           "seed": 42}
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps(doc))

    digests = []
    for name, threads in (("r1", "1"), ("r2", "1"), ("r4", "4")):
        out = tmp_path / name
        rc = main(["simulate", "--scene", str(scene), "--frames", "8",
                   "--seed", "42", "--threads", threads, "--out", str(out)])
        assert rc == 0
        blob = b"".join(f.read_bytes() for f in sorted(out.glob("frame_*.amsf")))
        digests.append(blob)
    ok = digests[0] == digests[1] == digests[2]
    report(9, "determinism across runs and threads", ok,
           f"{len(digests)} runs x 9 frames bit-identical")


def test_criterion_10_throughput_reported():
    from amsim.bench import bench_row

    row = bench_row(480, 30, frames=20, grid_res=32)
    # soft criterion: numbers are reported, not gated
    ok = row["residual"] <= 1e-9 and row["fps"] > 0
    report(10, "throughput (soft, reported)", ok,
           f"480x30 wisp, grid 32^3: {row['fps']:.1f} fps "
           f"({row['step_ms']:.1f} ms/frame), solver residual {row['residual']:.1e}; "
           f"target 60 fps is informational")

import json
import socket
import threading

import numpy as np
import pytest

from amsim.cli import EXIT_DIVERGED, EXIT_ENV, EXIT_OK, EXIT_USAGE, build_parser, main
from amsim.assets import icosphere, save_mesh, save_strands, StrandAsset
from amsim.scene import scene_dict
from conftest import hanging_rest, helix_rest


@pytest.fixture
def mesh_file(tmp_path):
    p = tmp_path / "scalp.obj"
    save_mesh(icosphere(1, radius=0.1), p)
    return p


@pytest.fixture
def scene_file(tmp_path):
    asset = StrandAsset.from_polylines([hanging_rest(8, 0.1), helix_rest(10)])
    save_strands(asset, tmp_path / "wisp.strands")
    doc = scene_dict("wisp.strands",
                     params={"kappa_edge": 1e4, "kappa_integrity": 50.0,
                             "kappa_angular": 20.0, "damping": 1.0,
                             "dt": 1e-3, "substeps": 1, "strand_mass": 0.005},
                     grid={"resolution": [8, 8, 8]})
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(doc))
    return p


# --- grow ---------------------------------------------------------------------

def test_grow_minimal(tmp_path, mesh_file):
    out = tmp_path / "out"
    rc = main(["grow", "--mesh", str(mesh_file), "--region", "0,1,2",
               "--params", '{"roots_per_triangle": 2, "vertex_count": 6}',
               "--out", str(out)])
    assert rc == EXIT_OK
    from amsim.assets import load_strands

    asset = load_strands(out / "grown.strands")
    assert asset.strand_count == 6  # 3 triangles x 2 roots
    assert list(asset.vertex_counts) == [6] * 6


def test_grow_sweep_emits_manifest(tmp_path, mesh_file):
    out = tmp_path / "sweep"
    rc = main(["grow", "--mesh", str(mesh_file), "--region", "0",
               "--params", '{"roots_per_triangle": 1, "vertex_count": 5}',
               "--sweep", "helix_radius=0.5,1,2:step_size=0.005,0.01,0.02",
               "--out", str(out)])
    assert rc == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest) == 9
    for entry in manifest:
        assert (out / entry["file"]).exists()


def test_grow_missing_mesh_env_error(tmp_path):
    rc = main(["grow", "--mesh", str(tmp_path / "nope.obj"), "--out", str(tmp_path)])
    assert rc == EXIT_ENV


def test_grow_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["grow"])  # missing required --mesh
    assert exc.value.code == EXIT_USAGE


def test_grow_deterministic_under_seed(tmp_path, mesh_file):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        rc = main(["grow", "--mesh", str(mesh_file), "--region", "0,1",
                   "--seed", "11", "--out", str(out)])
        assert rc == EXIT_OK
    assert (out1 / "grown.strands").read_bytes() == (out2 / "grown.strands").read_bytes()


# --- simulate -------------------------------------------------------------------

def test_simulate_zero_frames_writes_initial(tmp_path, scene_file):
    out = tmp_path / "run0"
    rc = main(["simulate", "--scene", str(scene_file), "--frames", "0",
               "--out", str(out)])
    assert rc == EXIT_OK
    frames = sorted(out.glob("frame_*.amsf"))
    assert len(frames) == 1
    assert (out / "diagnostics.csv").exists()


def test_simulate_deterministic_across_runs_and_threads(tmp_path, scene_file):
    outs = []
    for name, threads in (("r1", "1"), ("r2", "1"), ("r4", "4")):
        out = tmp_path / name
        rc = main(["simulate", "--scene", str(scene_file), "--frames", "5",
                   "--seed", "3", "--threads", threads, "--out", str(out)])
        assert rc == EXIT_OK
        outs.append(sorted(out.glob("frame_*.amsf")))
    for files in zip(*outs):
        blobs = [f.read_bytes() for f in files]
        assert blobs[0] == blobs[1] == blobs[2]


def test_simulate_stage_toggles_flag(tmp_path, scene_file):
    out = tmp_path / "toggles"
    rc = main(["simulate", "--scene", str(scene_file), "--frames", "2",
               "--stages", "grid=off,pairwise=off,collisions=off",
               "--out", str(out)])
    assert rc == EXIT_OK


def test_simulate_divergence_exit_code(tmp_path):
    # stiff plain-MS wisp (no ghost coupling), hair-scale mass, violent head
    # shake at a coarse dt: the divergence detector must trip
    rng = np.random.default_rng(0)
    polys = []
    for k in range(48):
        radius = 0.025 + rng.uniform(-0.004, 0.004)
        phase = rng.uniform(0, 2 * np.pi)
        root = np.array([rng.uniform(-0.02, 0.02), 0.0, rng.uniform(-0.02, 0.02)])
        t = np.linspace(0, 5 * np.pi, 30)
        polys.append(np.stack(
            [root[0] + radius * np.cos(t + phase) - radius * np.cos(phase),
             -0.018 * t,
             root[2] + radius * np.sin(t + phase) - radius * np.sin(phase)], axis=1))
    save_strands(StrandAsset.from_polylines(polys), tmp_path / "unstable.strands")
    times = np.arange(0, 121) * (1 / 24)
    track = [{"t": float(t),
              "translate": [0.25 * np.sin(18 * t), 0.05 * np.sin(11 * t),
                            0.2 * np.cos(13 * t)]} for t in times]
    doc = scene_dict("unstable.strands",
                     params={"kappa_edge": 1e6, "kappa_integrity": 0.0,
                             "kappa_angular": 0.0, "damping": 0.05,
                             "dt": 1 / 60, "substeps": 1, "strand_mass": 1e-4,
                             "preload": False},
                     head={"track": track},
                     grid={"resolution": [16, 16, 16],
                           "bounds": [[-1.0, -1.4, -1.0], [1.0, 0.6, 1.0]],
                           "friction_strength": 0.2,
                           "pair_radius": 0.002, "pair_stiffness": 0.3},
                     stages={"collisions": False})
    scene = tmp_path / "unstable.json"
    scene.write_text(json.dumps(doc))
    out = tmp_path / "boom"
    rc = main(["simulate", "--scene", str(scene), "--frames", "300",
               "--out", str(out)])
    assert rc == EXIT_DIVERGED


def test_simulate_missing_scene_env_error(tmp_path):
    rc = main(["simulate", "--scene", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "x")])
    assert rc == EXIT_ENV


# --- bench ---------------------------------------------------------------------

def test_bench_single_row(tmp_path, capsys):
    rc = main(["bench", "--strands", "1", "--particles", "12", "--frames", "3",
               "--grid", "8"])
    assert rc == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("backend,strands,particles")
    assert len(lines) == 2
    residual = float(lines[1].split(",")[-1])
    assert residual <= 1e-9


# --- serve ---------------------------------------------------------------------

def test_serve_port_busy_exit_3(tmp_path, scene_file):
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    blocker.listen(1)
    try:
        rc = main(["serve", "--scene", str(scene_file), "--port", str(port)])
        assert rc == EXIT_ENV
    finally:
        blocker.close()


# --- help snapshot ----------------------------------------------------------------

def test_help_lists_every_flag():
    parser = build_parser()
    expected = {
        "grow": {"--mesh", "--region", "--params", "--seed", "--out", "--name",
                 "--sweep"},
        "simulate": {"--scene", "--frames", "--out", "--stages", "--seed",
                     "--threads"},
        "bench": {"--strands", "--particles", "--frames", "--grid",
                  "--compare-backends", "--out"},
        "serve": {"--scene", "--host", "--port", "--fps", "--threads"},
    }
    sub_actions = [a for a in parser._actions
                   if isinstance(a, type(parser._subparsers._group_actions[0]))]
    choices = sub_actions[0].choices
    for name, flags in expected.items():
        help_text = choices[name].format_help()
        for flag in flags:
            assert flag in help_text, f"{name} help missing {flag}"

"""Command line entry points: grow, simulate, bench, serve.

Exit codes: 0 success, 2 usage error, 3 environment error (missing files,
busy port), 4 numerical divergence. The default output directory is
``./amsim_out``, overridable with --out or the AMSIM_OUT environment
variable.

Diagnostics CSV schema v1 columns: frame, time_s, max_velocity, max_strain,
degenerate, pairs, skipped_samples, ms_ghost, ms_integrate, ms_inext,
ms_grid, ms_pairwise, ms_collide, ms_non_hookean, ms_total.
"""

import argparse
import json
import os
import sys
from pathlib import Path


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ENV = 3
EXIT_DIVERGED = 4

DIAG_COLUMNS = ["frame", "time_s", "max_velocity", "max_strain", "degenerate",
                "pairs", "skipped_samples", "ms_ghost", "ms_integrate",
                "ms_inext", "ms_grid", "ms_pairwise", "ms_collide",
                "ms_non_hookean", "ms_total"]


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("AMSIM_OUT", "amsim_out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_id_list(spec: str, limit: int) -> list:
    if spec == "all":
        return list(range(limit))
    try:
        return [int(x) for x in spec.split(",") if x != ""]
    except ValueError:
        raise SystemExit(EXIT_USAGE)


def cmd_grow(args) -> int:
    from .assets import load_mesh, save_strands
    from .growth import GrowthError, GrowthParams, grow, parameter_sweep

    mesh_path = Path(args.mesh)
    if not mesh_path.exists():
        print(f"error: mesh {mesh_path} not found", file=sys.stderr)
        return EXIT_ENV
    mesh = load_mesh(mesh_path)
    region = _parse_id_list(args.region, mesh.faces.shape[0])
    overrides = json.loads(args.params) if args.params else {}
    overrides.setdefault("seed", args.seed)
    try:
        params = GrowthParams(**overrides)
    except (GrowthError, TypeError) as exc:
        print(f"error: bad growth params: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(args)
    try:
        if args.sweep:
            try:
                axis_specs = []
                for part in args.sweep.split(":"):
                    name, values = part.split("=")
                    axis_specs.append((name, [float(v) for v in values.split(",")]))
                axis1, axis2 = axis_specs
            except ValueError:
                print("error: --sweep expects 'p1=v,v,..:p2=v,v,..'", file=sys.stderr)
                return EXIT_USAGE
            manifest = parameter_sweep(mesh, region, params, axis1, axis2, out)
            print(f"wrote {len(manifest)} assets + manifest.json to {out}")
        else:
            asset = grow(mesh, region, params)
            target = out / (args.name or "grown.strands")
            save_strands(asset, target)
            print(f"wrote {asset.strand_count} strands to {target}")
    except GrowthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _apply_stage_flags(cfg, spec: str):
    if not spec:
        return
    for part in spec.split(","):
        name, _, value = part.partition("=")
        if not hasattr(cfg.stages, name):
            raise SystemExit(EXIT_USAGE)
        setattr(cfg.stages, name, value.strip() not in ("0", "off", "false", "no"))


def cmd_simulate(args) -> int:
    from .scene import SceneValidationError, load_scene
    from .runtime import Session
    from .solver import SolverError
    from .assets import write_frame

    try:
        cfg = load_scene(args.scene)
    except SceneValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    _apply_stage_flags(cfg, args.stages)
    cfg.seed = args.seed if args.seed is not None else cfg.seed
    out = _out_dir(args)
    session = Session(cfg, threads=args.threads)
    diag_rows = []
    write_frame(out / "frame_000000.amsf", 0, session.sim.positions_flat())
    last_good = 0
    code = EXIT_OK
    try:
        for k in range(1, args.frames + 1):
            diag = session.step_frame()
            if k % cfg.output_stride == 0:
                write_frame(out / f"frame_{k:06d}.amsf", k,
                            session.sim.positions_flat())
            last_good = k
            ms = diag["stage_ms"]
            diag_rows.append([
                diag["frame"], f"{diag['time']:.6f}",
                f"{diag['max_velocity']:.6e}", f"{diag['max_strain']:.6e}",
                diag["degenerate"], diag["pairs"], diag["skipped_samples"],
                f"{ms.get('ghost', 0.0):.3f}", f"{ms.get('integrate', 0.0):.3f}",
                f"{ms.get('inextensibility', 0.0):.3f}", f"{ms.get('grid', 0.0):.3f}",
                f"{ms.get('pairwise', 0.0):.3f}", f"{ms.get('collide', 0.0):.3f}",
                f"{ms.get('non_hookean', 0.0):.3f}",
                f"{sum(ms.values()):.3f}"])
    except SolverError as exc:
        print(f"divergence: {exc}; last good frame {last_good}", file=sys.stderr)
        code = EXIT_DIVERGED
    lines = [",".join(DIAG_COLUMNS)]
    lines += [",".join(str(c) for c in row) for row in diag_rows]
    (out / "diagnostics.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {last_good + 1} frames to {out}")
    return code


def cmd_bench(args) -> int:
    from . import bench

    strands = [int(s) for s in args.strands.split(",")]
    particles = [int(p) for p in args.particles.split(",")]
    if args.compare_backends:
        csv = bench.compare_backends(strands, particles, args.frames, args.grid)
    else:
        csv = bench.rows_to_csv(bench.run_bench(strands, particles, args.frames,
                                                args.grid))
    print(csv, end="")
    if args.out:
        out = _out_dir(args)
        (out / "bench.csv").write_text(csv)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .scene import SceneValidationError, load_scene
    from .runtime import Session
    from .server import serve

    try:
        cfg = load_scene(args.scene)
    except SceneValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    import socket

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((args.host, args.port))
    except OSError as exc:
        print(f"error: cannot bind port {args.port}: {exc}", file=sys.stderr)
        return EXIT_ENV
    finally:
        probe.close()
    session = Session(cfg, threads=args.threads)
    try:
        serve(session, host=args.host, port=args.port, fps=args.fps)
    except (OSError, SystemExit) as exc:
        print(f"error: cannot bind port {args.port}: {exc}", file=sys.stderr)
        return EXIT_ENV
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amsim",
        description="Strand-level fiber dynamics: growth, simulation, "
                    "benchmarks and the interactive grooming server.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grow", help="generate strand assets on a scalp mesh")
    g.add_argument("--mesh", required=True, help="triangle mesh file (v/f lines)")
    g.add_argument("--region", default="all",
                   help="comma separated triangle ids, or 'all'")
    g.add_argument("--params", default="",
                   help="JSON object of growth parameter overrides")
    g.add_argument("--seed", type=int, default=0, help="growth RNG seed")
    g.add_argument("--out", default="", help="output directory")
    g.add_argument("--name", default="", help="asset file name")
    g.add_argument("--sweep", default="",
                   help="two sweep axes, 'param=v1,v2,..:param2=w1,w2,..'")
    g.set_defaults(func=cmd_grow)

    s = sub.add_parser("simulate", help="run a scene and write frames + diagnostics")
    s.add_argument("--scene", required=True, help="scene JSON document")
    s.add_argument("--frames", type=int, default=60, help="frames to simulate")
    s.add_argument("--out", default="", help="output directory")
    s.add_argument("--stages", default="",
                   help="stage toggles, e.g. 'grid=off,pairwise=on'")
    s.add_argument("--seed", type=int, default=None, help="override scene seed")
    s.add_argument("--threads", type=int, default=1, help="worker pool size")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="solver timing table with oracle residuals")
    b.add_argument("--strands", default="1,64,480", help="strand counts, comma list")
    b.add_argument("--particles", default="30", help="particles per strand, comma list")
    b.add_argument("--frames", type=int, default=20, help="frames per timing row")
    b.add_argument("--grid", type=int, default=32, help="interaction grid resolution")
    b.add_argument("--compare-backends", action="store_true",
                   help="also run the pure-numpy fallback in a subprocess")
    b.add_argument("--out", default="", help="also write bench.csv here")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("serve", help="serve the interactive grooming session")
    v.add_argument("--scene", required=True, help="scene JSON document")
    v.add_argument("--host", default="127.0.0.1", help="bind address")
    v.add_argument("--port", type=int, default=8765, help="TCP port")
    v.add_argument("--fps", type=float, default=60.0, help="target frame rate")
    v.add_argument("--threads", type=int, default=1, help="worker pool size")
    v.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

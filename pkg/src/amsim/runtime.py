"""Frame orchestration: ghost update, strand solves, inextensibility, grid
coupling, pairwise resolution, solid collisions, non-Hookean update.

Strands are grouped into equal-particle-count batches with contiguous arrays
so one kernel call integrates a whole group. All cross-strand accumulation
(grid scatter, pairwise impulses) runs in fixed strand order, so results are
bit-identical for any worker count.
"""

import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import solver
from .assets import StrandAsset, frame_bytes
from .grid import (EulerianGrid, grid_regularize, rasterize, resolve_pairwise,
                   transfer_back)
from .scene import SceneConfig
from .sdf import collide_position, collide_velocity
from .solver import check_batch_status


class EditError(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"[{code}] {message}")


@dataclass
class StrandBatch:
    """Contiguous arrays for all strands sharing one particle count."""

    n: int
    ids: np.ndarray             # (S,) global strand indices
    x: np.ndarray               # (S, n, 3)
    v: np.ndarray
    plasticity: np.ndarray      # (S, n)
    masses: np.ndarray          # (S, n)
    rest_local: np.ndarray      # (S, n, 3) head-local rest shape
    preload_local: np.ndarray   # (S, n, 3)
    rest1: np.ndarray
    rest2: np.ndarray
    rest3: np.ndarray
    k_edge: np.ndarray          # (S,)
    k_bend: np.ndarray
    k_tors: np.ndarray
    k_int: np.ndarray
    k_ang: np.ndarray
    gamma: np.ndarray
    anchor_k: np.ndarray        # (S, n)
    anchor_pos: np.ndarray      # (S, n, 3)
    anchor_vel: np.ndarray
    ghost_y: np.ndarray         # (S, n, 3) current integrity targets
    ghost_shape: np.ndarray
    ghost_w: np.ndarray
    root_vel: np.ndarray        # (S, 3) kinematic root velocity this frame
    flat_index: np.ndarray = None  # (S*n,) slots in the asset-order flat arrays

    @property
    def count(self) -> int:
        return self.ids.shape[0]


def _offset_rests(rest: np.ndarray, off: int) -> np.ndarray:
    if rest.shape[0] > off:
        return np.linalg.norm(rest[off:] - rest[:-off], axis=1)
    return np.zeros(0)


class Simulation:
    """Owns all mutable state; one thread steps it at a time."""

    def __init__(self, config: SceneConfig):
        self.config = config
        self.params = config.params
        self.head_track = config.head_track
        self.wind = config.wind
        self.stages = config.stages
        self.sdfs = config.build_sdfs()
        gc = config.grid
        h = float(np.max((gc.bounds_hi - gc.bounds_lo) / np.asarray(gc.resolution)))
        self.grid = EulerianGrid(gc.resolution, gc.bounds_lo, h)
        self.frame = 0
        self.t = 0.0
        self.diagnostics = {}
        self._build_strands(config.asset)

    # -- construction --------------------------------------------------------

    def _strand_scale(self, overrides: dict, key: str, s: int, default=1.0) -> float:
        arr = overrides.get(key)
        if arr is None:
            return default
        return float(arr[s])

    def _build_strands(self, asset: StrandAsset):
        ov = asset.overrides or {}
        self._polylines = [asset.strand_positions(s).copy() for s in range(asset.strand_count)]
        self._mass_scale = [self._strand_scale(ov, "mass_scale", s) for s in range(asset.strand_count)]
        self._kappa_scale = {
            "edge": [self._strand_scale(ov, "kappa_edge_scale", s) for s in range(asset.strand_count)],
            "int": [self._strand_scale(ov, "kappa_integrity_scale", s) for s in range(asset.strand_count)],
            "ang": [self._strand_scale(ov, "kappa_angular_scale", s) for s in range(asset.strand_count)],
        }
        self._grabs = {}
        self._rebuild_batches(reset_state=True)

    def _rebuild_batches(self, reset_state: bool, keep: dict = None):
        """Group strands by particle count; optionally carry over state."""
        p = self.params
        groups = {}
        for s, rest in enumerate(self._polylines):
            groups.setdefault(rest.shape[0], []).append(s)
        t0 = self.head_track.at(self.t)
        batches = []
        for n, ids in sorted(groups.items()):
            S = len(ids)
            rest_local = np.stack([self._polylines[s] for s in ids])
            masses = np.empty((S, n))
            k_edge = np.empty(S)
            k_int = np.empty(S)
            k_ang = np.empty(S)
            for row, s in enumerate(ids):
                masses[row] = p.strand_mass * self._mass_scale[s] / n
                k_edge[row] = p.kappa_edge * self._kappa_scale["edge"][s]
                k_int[row] = p.kappa_integrity * self._kappa_scale["int"][s]
                k_ang[row] = p.kappa_angular * self._kappa_scale["ang"][s]
            preload = np.zeros((S, n, 3))
            if p.preload and p.kappa_integrity > 0.0:
                for row in range(S):
                    if k_int[row] > 0.0:
                        preload[row] = -np.outer(masses[row] / k_int[row], p.gravity)
                        preload[row, 0] = 0.0
            batch = StrandBatch(
                n=n, ids=np.array(ids, dtype=np.int64),
                x=t0.apply(rest_local.reshape(-1, 3)).reshape(S, n, 3),
                v=np.zeros((S, n, 3)),
                plasticity=np.ones((S, n)),
                masses=masses,
                rest_local=rest_local,
                preload_local=preload,
                rest1=np.stack([_offset_rests(r, 1) for r in rest_local]),
                rest2=np.stack([_offset_rests(r, 2) for r in rest_local]),
                rest3=np.stack([_offset_rests(r, 3) for r in rest_local]),
                k_edge=k_edge,
                k_bend=k_edge if p.kappa_bending is None else np.full(S, p.kappa_bend()),
                k_tors=k_edge if p.kappa_torsion is None else np.full(S, p.kappa_tors()),
                k_int=k_int, k_ang=k_ang,
                gamma=np.full(S, p.damping),
                anchor_k=np.zeros((S, n)),
                anchor_pos=np.zeros((S, n, 3)),
                anchor_vel=np.zeros((S, n, 3)),
                ghost_y=t0.apply((rest_local + preload).reshape(-1, 3)).reshape(S, n, 3),
                ghost_shape=t0.apply(rest_local.reshape(-1, 3)).reshape(S, n, 3),
                ghost_w=np.zeros((S, n, 3)),
                root_vel=np.zeros((S, 3)))
            if not reset_state and keep is not None:
                for row, s in enumerate(ids):
                    if s in keep:
                        x, v, pl = keep[s]
                        batch.x[row] = x
                        batch.v[row] = v
                        batch.plasticity[row] = pl
            batches.append(batch)
        self.batches = batches
        self._index = {}
        for b in self.batches:
            for row, s in enumerate(b.ids):
                self._index[int(s)] = (b, row)
        counts = [p.shape[0] for p in self._polylines]
        starts = np.concatenate([[0], np.cumsum(counts)])
        self._total_particles = int(starts[-1])
        for b in self.batches:
            b.flat_index = np.concatenate(
                [np.arange(starts[s], starts[s] + b.n) for s in b.ids])
        self._flat_mass = np.empty(self._total_particles)
        self._flat_ids = np.empty(self._total_particles, dtype=np.int64)
        for b in self.batches:
            self._flat_mass[b.flat_index] = b.masses.reshape(-1)
            self._flat_ids[b.flat_index] = np.repeat(b.ids, b.n)

    # -- queries ---------------------------------------------------------------

    @property
    def strand_count(self) -> int:
        return len(self._polylines)

    def vertex_counts(self) -> list:
        return [p.shape[0] for p in self._polylines]

    def strand_arrays(self, s: int):
        b, row = self._index[s]
        return b.x[row], b.v[row], b.plasticity[row]

    def positions_flat(self) -> np.ndarray:
        """Particle positions in asset strand order (frame payload order)."""
        out = np.empty((self._total_particles, 3))
        for b in self.batches:
            out[b.flat_index] = b.x.reshape(-1, 3)
        return out

    def total_rest_length(self, s: int) -> float:
        rest = self._polylines[s]
        return float(np.linalg.norm(np.diff(rest, axis=0), axis=1).sum())

    # -- stepping ----------------------------------------------------------------

    def step(self, threads: int = 1) -> dict:
        p = self.params
        dt = p.dt
        m_sub = p.substeps
        dt_sub = dt / m_sub
        timings = {}
        trace = []
        diag = {"frame": self.frame, "time": self.t, "diverged": False,
                "strand_error": None, "degenerate": 0, "pairs": 0,
                "skipped_samples": 0}

        def stage(name):
            trace.append(name)
            timings[name] = time.perf_counter()

        def stage_done(name):
            timings[name] = (time.perf_counter() - timings[name]) * 1e3

        # ghost rigid-body dynamics first, per substep
        stage("ghost")
        ghost_tracks = []
        for b in self.batches:
            y_int = np.empty((m_sub, b.count, b.n, 3))
            y_ang = np.empty((m_sub, b.count, b.n, 3))
            w = np.empty((m_sub, b.count, b.n, 3))
            root_v = np.empty((m_sub, b.count, 3))
            prev_y = b.ghost_y
            prev_root = b.x[:, 0, :].copy()
            flat_rest = b.rest_local.reshape(-1, 3)
            flat_off = (b.rest_local + b.preload_local).reshape(-1, 3)
            for m in range(m_sub):
                tm = self.head_track.at(self.t + (m + 1) * dt_sub)
                y_int[m] = tm.apply(flat_off).reshape(b.count, b.n, 3)
                y_ang[m] = tm.apply(flat_rest).reshape(b.count, b.n, 3)
                w[m] = (y_int[m] - prev_y) / dt_sub
                root_new = y_ang[m][:, 0, :]
                root_v[m] = (root_new - prev_root) / dt_sub
                prev_y = y_int[m]
                prev_root = root_new
            ghost_tracks.append((y_int, y_ang, w, root_v))
        stage_done("ghost")

        stage("integrate")
        wind_t = self.wind.at(self.t, np.zeros((1, 3)))[0]
        jobs = []
        for b, gt in zip(self.batches, ghost_tracks):
            f_ext = b.masses[..., None] * p.gravity + self.wind.at(
                self.t, b.x.reshape(-1, 3)).reshape(b.count, b.n, 3)
            jobs.append((b, gt, f_ext))
        statuses = []
        if threads <= 1 or len(jobs) == 0:
            for b, gt, f_ext in jobs:
                statuses.append((b, *solver.integrate_batch_arrays(b, f_ext, gt, dt_sub, m_sub)))
        else:
            def run_slice(b, gt, f_ext, lo, hi):
                sub = StrandBatch(
                    n=b.n, ids=b.ids[lo:hi], x=b.x[lo:hi], v=b.v[lo:hi],
                    plasticity=b.plasticity[lo:hi], masses=b.masses[lo:hi],
                    rest_local=b.rest_local[lo:hi], preload_local=b.preload_local[lo:hi],
                    rest1=b.rest1[lo:hi], rest2=b.rest2[lo:hi], rest3=b.rest3[lo:hi],
                    k_edge=b.k_edge[lo:hi], k_bend=b.k_bend[lo:hi], k_tors=b.k_tors[lo:hi],
                    k_int=b.k_int[lo:hi], k_ang=b.k_ang[lo:hi], gamma=b.gamma[lo:hi],
                    anchor_k=b.anchor_k[lo:hi], anchor_pos=b.anchor_pos[lo:hi],
                    anchor_vel=b.anchor_vel[lo:hi],
                    ghost_y=b.ghost_y[lo:hi], ghost_shape=b.ghost_shape[lo:hi],
                    ghost_w=b.ghost_w[lo:hi], root_vel=b.root_vel[lo:hi])
                gts = tuple(a[:, lo:hi] for a in gt[:3]) + (gt[3][:, lo:hi],)
                return solver.integrate_batch_arrays(sub, f_ext[lo:hi], gts, dt_sub, m_sub)

            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = []
                for b, gt, f_ext in jobs:
                    edges = np.linspace(0, b.count, threads + 1, dtype=int)
                    for lo, hi in zip(edges, edges[1:]):
                        if hi > lo:
                            futures.append((b, lo, pool.submit(run_slice, b, gt, f_ext, lo, hi)))
                merged = {}
                for b, lo, fut in futures:
                    st, dg = fut.result()
                    merged.setdefault(id(b), [b, [], []])
                    merged[id(b)][1].append((lo, st))
                    merged[id(b)][2].append((lo, dg))
                for b, st_parts, dg_parts in merged.values():
                    st = np.zeros(b.count, dtype=np.int64)
                    dg = np.zeros(b.count, dtype=np.int64)
                    for lo, part in st_parts:
                        st[lo:lo + part.shape[0]] = part
                    for lo, part in dg_parts:
                        dg[lo:lo + part.shape[0]] = part
                    statuses.append((b, st, dg))

        for b, gt in zip(self.batches, ghost_tracks):
            y_int, y_ang, w, root_v = gt
            b.ghost_y = y_int[-1]
            b.ghost_shape = y_ang[-1]
            b.ghost_w = w[-1]
            b.root_vel = root_v[-1]
            b.x[:, 0, :] = y_ang[-1][:, 0, :]  # kill root drift
        for b, st, dg in statuses:
            diag["degenerate"] += int(dg.sum())
            if np.any(st != 0):
                bad = int(b.ids[int(np.nonzero(st != 0)[0][0])])
                diag["diverged"] = True
                diag["strand_error"] = bad
                self.diagnostics = diag
                check_batch_status(st, strand_labels=b.ids)
        stage_done("integrate")

        max_strain = 0.0
        if self.stages.inextensibility:
            stage("inextensibility")
            for b in self.batches:
                strain = np.zeros(b.count)
                solver.kernels.ftl_batch(b.x, b.v, b.rest1, dt,
                                         p.inext_tolerance, 8, strain)
                if b.count:
                    max_strain = max(max_strain, float(strain.max()))
            stage_done("inextensibility")

        if self.stages.grid:
            stage("grid")
            self.grid.anchor = self.head_track.at(self.t + dt)
            flat_pos, flat_vel, flat_mass, _ = self._flat_particles()
            # particle samples first, then one midpoint per segment, in fixed
            # batch order: accumulation stays worker-count independent
            mids_p = [flat_pos]
            mids_v = [flat_vel]
            mids_m = [flat_mass]
            for b in self.batches:
                mids_p.append((0.5 * (b.x[:, 1:] + b.x[:, :-1])).reshape(-1, 3))
                mids_v.append((0.5 * (b.v[:, 1:] + b.v[:, :-1])).reshape(-1, 3))
                mids_m.append((0.5 * (b.masses[:, 1:] + b.masses[:, :-1])).reshape(-1))
            rasterize(self.grid, np.concatenate(mids_p), np.concatenate(mids_v),
                      np.concatenate(mids_m))
            diag["skipped_samples"] = self.grid.skipped_samples
            before = self.grid.copy_fields()
            grid_regularize(self.grid, self.config.grid.friction_strength,
                            self.config.grid.iterations,
                            self.config.grid.pressure_projection)
            new_vel = transfer_back(before, self.grid, flat_pos, flat_vel, p.flip_blend)
            self._write_back_velocities(new_vel)
            stage_done("grid")

        if self.stages.pairwise:
            stage("pairwise")
            flat_pos, flat_vel, flat_mass, flat_ids = self._flat_particles()
            new_pos, new_vel, pairs = resolve_pairwise(
                flat_pos, flat_vel, flat_mass, flat_ids,
                self.config.grid.pair_radius, self.config.grid.pair_stiffness)
            diag["pairs"] = pairs
            if pairs:
                self._write_back_positions(new_pos)
                self._write_back_velocities(new_vel)
            stage_done("pairwise")

        if self.stages.collisions and self.sdfs:
            stage("collide")
            for sdf in self.sdfs:
                sdf.update_motion(self.t + dt)
            flat_pos, flat_vel, _, _ = self._flat_particles()
            new_vel, new_pos = self._collide_all(flat_pos, flat_vel, dt)
            self._write_back_velocities(new_vel)
            self._write_back_positions(new_pos)
            stage_done("collide")

        if self.stages.non_hookean:
            stage("non_hookean")
            curve = p.non_hookean
            if not curve.is_identity():
                for b in self.batches:
                    d = np.linalg.norm(b.x - b.ghost_y, axis=2)
                    m_new = curve(d)
                    if curve.plastic:
                        b.plasticity = np.minimum(b.plasticity, m_new)
                    else:
                        b.plasticity = m_new
            stage_done("non_hookean")

        # pinned roots stay kinematic regardless of later stages
        for b in self.batches:
            b.x[:, 0, :] = b.ghost_shape[:, 0, :]
            b.v[:, 0, :] = b.root_vel

        self.frame += 1
        self.t += dt
        max_v = 0.0
        for b in self.batches:
            if b.count:
                max_v = max(max_v, float(np.abs(b.v).max()))
        diag["max_velocity"] = max_v
        diag["max_strain"] = max_strain
        diag["wind"] = wind_t.tolist()
        diag["stage_ms"] = timings
        diag["stage_trace"] = trace
        self.diagnostics = diag
        return diag

    def _flat_particles(self):
        pos = np.empty((self._total_particles, 3))
        vel = np.empty((self._total_particles, 3))
        for b in self.batches:
            pos[b.flat_index] = b.x.reshape(-1, 3)
            vel[b.flat_index] = b.v.reshape(-1, 3)
        return pos, vel, self._flat_mass, self._flat_ids

    def _write_back_velocities(self, flat_vel):
        for b in self.batches:
            b.v[:] = flat_vel[b.flat_index].reshape(b.count, b.n, 3)

    def _write_back_positions(self, flat_pos):
        for b in self.batches:
            b.x[:] = flat_pos[b.flat_index].reshape(b.count, b.n, 3)

    def _collide_all(self, pos, vel, dt):
        if len(self.sdfs) == 1:
            sdf = self.sdfs[0]
            new_vel = collide_velocity(pos, vel, dt, sdf, self.params.friction)
            new_pos = collide_position(pos, np.zeros_like(pos), 0.0, sdf)
            return new_vel, new_pos
        # multiple solids: correct each particle against its minimum-sigma solid
        targets = pos + dt * vel
        sig = np.stack([sdf.distance(targets) for sdf in self.sdfs])
        kmin = np.argmin(sig, axis=0)
        new_vel = vel.copy()
        for k, sdf in enumerate(self.sdfs):
            sel = kmin == k
            if sel.any():
                new_vel[sel] = collide_velocity(pos[sel], vel[sel], dt, sdf,
                                                self.params.friction)
        sig_now = np.stack([sdf.distance(pos) for sdf in self.sdfs])
        kmin_now = np.argmin(sig_now, axis=0)
        new_pos = pos.copy()
        for k, sdf in enumerate(self.sdfs):
            sel = kmin_now == k
            if sel.any():
                new_pos[sel] = collide_position(pos[sel], np.zeros((int(sel.sum()), 3)),
                                                0.0, sdf)
        return new_vel, new_pos

    # -- edits --------------------------------------------------------------------

    def trim_strand(self, s: int, fraction: float):
        if not 0.0 < fraction <= 1.0:
            raise EditError("bad_fraction", "trim fraction must be in (0, 1]")
        if s < 0 or s >= self.strand_count:
            raise EditError("unknown_strand", f"strand {s} out of range")
        rest = self._polylines[s]
        n = rest.shape[0]
        new_n = int(np.clip(round(fraction * n), 2, n))
        if new_n == n:
            return
        keep = {}
        for sid in range(self.strand_count):
            x, v, pl = self.strand_arrays(sid)
            if sid == s:
                keep[sid] = (x[:new_n].copy(), v[:new_n].copy(), pl[:new_n].copy())
            else:
                keep[sid] = (x.copy(), v.copy(), pl.copy())
        self._polylines[s] = rest[:new_n].copy()
        self._rebuild_batches(reset_state=False, keep=keep)
        self._reapply_grabs()

    def set_param(self, key: str, value):
        if not hasattr(self.params, key):
            raise EditError("unknown_param", f"no such parameter {key!r}")
        current = getattr(self.params, key)
        if isinstance(current, np.ndarray):
            value = np.asarray(value, dtype=np.float64).reshape(current.shape)
        elif isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int):
            value = int(value)
        elif current is None or isinstance(current, float):
            value = float(value)
        else:
            raise EditError("unknown_param", f"parameter {key!r} is not settable live")
        if key.startswith("kappa") and value is not None and value < 0.0:
            raise EditError("bad_value", f"{key} must be >= 0")
        if key == "dt" and value <= 0.0:
            raise EditError("bad_value", "dt must be > 0")
        if key == "substeps" and value < 1:
            raise EditError("bad_value", "substeps must be >= 1")
        setattr(self.params, key, value)
        if key in ("kappa_edge", "kappa_integrity", "kappa_angular", "strand_mass",
                   "damping", "preload"):
            keep = {sid: tuple(a.copy() for a in self.strand_arrays(sid))
                    for sid in range(self.strand_count)}
            self._rebuild_batches(reset_state=False, keep=keep)
            self._reapply_grabs()

    def set_wind(self, force):
        self.wind.times = np.array([0.0])
        self.wind.forces = np.asarray(force, dtype=np.float64).reshape(1, 3)

    def grab(self, s: int, particle: int, pos, kappa: float = 50.0):
        if s < 0 or s >= self.strand_count:
            raise EditError("unknown_strand", f"strand {s} out of range")
        b, row = self._index[s]
        if particle < 0 or particle >= b.n:
            raise EditError("unknown_particle", f"particle {particle} out of range")
        self._grabs[s] = (particle, float(kappa), np.asarray(pos, dtype=np.float64))
        self._reapply_grabs()

    def grab_move(self, pos):
        for s, (particle, kappa, _) in list(self._grabs.items()):
            self._grabs[s] = (particle, kappa, np.asarray(pos, dtype=np.float64))
        self._reapply_grabs()

    def grab_end(self):
        self._grabs.clear()
        self._reapply_grabs()

    def _reapply_grabs(self):
        for b in self.batches:
            b.anchor_k[:] = 0.0
            b.anchor_pos[:] = 0.0
            b.anchor_vel[:] = 0.0
        for s, (particle, kappa, pos) in self._grabs.items():
            b, row = self._index[s]
            if particle < b.n:
                b.anchor_k[row, particle] = kappa
                b.anchor_pos[row, particle] = pos

    def reset(self):
        self.frame = 0
        self.t = 0.0
        self._rebuild_batches(reset_state=True)
        self._grabs.clear()


class Session:
    """Live simulation plus an ordered edit queue applied between frames."""

    def __init__(self, config: SceneConfig, threads: int = 1):
        self.sim = Simulation(config)
        self.threads = threads
        self.playing = True
        self._edits = queue.Queue()
        self._edit_counter = 0
        self._lock = threading.Lock()
        self._applied = []
        self._topology_version = 0
        self.latest = None
        self._snapshot()

    @property
    def frame(self) -> int:
        return self.sim.frame

    def topology(self) -> dict:
        return {"strands": self.sim.vertex_counts(),
                "version": self._topology_version}

    def queue_edit(self, edit: dict) -> str:
        """Validate shallowly and enqueue; returns the edit id."""
        if not isinstance(edit, dict) or "op" not in edit:
            raise EditError("malformed_edit", "edit must be an object with an 'op'")
        op = edit["op"]
        known = {"trim", "grab", "grab_move", "grab_end", "param_set",
                 "wind_set", "play", "pause", "reset"}
        if op not in known:
            raise EditError("unknown_op", f"unsupported edit op {op!r}")
        with self._lock:
            self._edit_counter += 1
            edit_id = edit.get("id") or f"e{self._edit_counter}"
        self._edits.put((edit_id, edit))
        return edit_id

    def drain_edits(self):
        """Apply queued edits atomically between frames; returns
        [(edit_id, error-or-None), ...] in application order."""
        results = []
        while True:
            try:
                edit_id, edit = self._edits.get_nowait()
            except queue.Empty:
                break
            try:
                self._apply(edit)
                results.append((edit_id, None))
            except EditError as exc:
                results.append((edit_id, exc))
        if results:
            self._snapshot()
        return results

    def _apply(self, edit: dict):
        op = edit["op"]
        sim = self.sim
        if op == "trim":
            before = sim.vertex_counts()
            sim.trim_strand(int(edit.get("strand", -1)), float(edit.get("fraction", 1.0)))
            if sim.vertex_counts() != before:
                self._topology_version += 1
        elif op == "grab":
            sim.grab(int(edit.get("strand", -1)), int(edit.get("particle", -1)),
                     edit.get("pos", [0, 0, 0]), float(edit.get("kappa", 50.0)))
        elif op == "grab_move":
            sim.grab_move(edit.get("pos", [0, 0, 0]))
        elif op == "grab_end":
            sim.grab_end()
        elif op == "param_set":
            if "key" not in edit or "value" not in edit:
                raise EditError("malformed_edit", "param_set needs key and value")
            sim.set_param(str(edit["key"]), edit["value"])
        elif op == "wind_set":
            sim.set_wind(edit.get("force", [0, 0, 0]))
        elif op == "play":
            self.playing = True
        elif op == "pause":
            self.playing = False
        elif op == "reset":
            sim.reset()
            self._topology_version += 1

    def step_frame(self) -> dict:
        """Drain edits, advance one frame, snapshot for subscribers."""
        results = self.drain_edits()
        diag = self.sim.step(self.threads)
        diag["edits"] = [(eid, None if err is None else err.code) for eid, err in results]
        self._snapshot()
        with self._lock:
            self._applied.extend(results)
        return diag

    def drain_acks(self):
        with self._lock:
            out = self._applied
            self._applied = []
        return out

    def _snapshot(self):
        pos = self.sim.positions_flat()
        self.latest = {
            "frame": self.sim.frame,
            "topology_version": self._topology_version,
            "payload": frame_bytes(self.sim.frame, pos),
            "particles": int(pos.shape[0]),
        }

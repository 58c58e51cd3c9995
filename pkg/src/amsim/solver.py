"""Per-strand semi-implicit system assembly and the exact heptadiagonal solve.

The velocity system is (I + dt M^-1 G - dt^2 M^-1 C) V = b with the ghost
coupling folded into the diagonal and rhs only, so the system stays 3n x 3n
with 3x3 blocks on offsets -3..3. It is solved exactly by one forward and one
backward block sweep.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .kernels import DIVERGENCE_LIMIT, STATUS_DIVERGED
from .strand import GhostConfig, SimParams, Strand, StrandState


class SolverError(RuntimeError):
    pass


def direction_matrix(d) -> np.ndarray:
    """Outer product of the unit direction of d; the zero matrix when d is
    (numerically) zero, mirroring the ghost direction matrix convention."""
    d = np.asarray(d, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(d)
    if norm < 1e-300:
        return np.zeros((3, 3))
    u = d / norm
    return np.outer(u, u)


class SingularBlockError(SolverError):
    def __init__(self, row: int, strand: int = -1):
        self.row = row
        self.strand = strand
        where = f"strand {strand}, " if strand >= 0 else ""
        super().__init__(f"singular diagonal block ({where}row {row})")


class DivergenceError(SolverError):
    def __init__(self, detail: str = ""):
        super().__init__(f"simulation diverged{': ' + detail if detail else ''}")


@dataclass
class BandedSystem:
    """3x3-block heptadiagonal matrix in band storage plus right-hand side.

    bands[off + 3, i] holds block A[i, i + off]; entries outside the matrix
    are zero and never touched by the solver.
    """

    n: int
    bands: np.ndarray  # (7, n, 3, 3)
    rhs: np.ndarray    # (n, 3)

    @staticmethod
    def zeros(n: int) -> "BandedSystem":
        return BandedSystem(n, np.zeros((7, n, 3, 3)), np.zeros((n, 3)))

    def block(self, i: int, j: int) -> np.ndarray:
        if abs(i - j) > 3:
            return np.zeros((3, 3))
        return self.bands[j - i + 3, i]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((3 * self.n, 3 * self.n))
        for i in range(self.n):
            for j in range(max(0, i - 3), min(self.n, i + 4)):
                dense[3 * i:3 * i + 3, 3 * j:3 * j + 3] = self.bands[j - i + 3, i]
        return dense

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = np.empty((self.n, 3))
        kernels.banded_matvec(self.bands, np.ascontiguousarray(v, dtype=np.float64), out)
        return out

    def residual(self, v: np.ndarray) -> float:
        return float(np.max(np.abs(self.matvec(v) - self.rhs)))


def _rest_offset_lengths(strand: Strand):
    rest = strand.rest_positions
    out = []
    for off in (1, 2, 3):
        if strand.particle_count > off:
            out.append(np.linalg.norm(rest[off:] - rest[:-off], axis=1))
        else:
            out.append(np.zeros(0))
    return out


def _spring_rest_arrays(strand: Strand):
    """Rest lengths per band offset taken from the spring network entries."""
    n = strand.particle_count
    arrs = [np.zeros(max(n - 1, 0)), np.zeros(max(n - 2, 0)), np.zeros(max(n - 3, 0))]
    default = _rest_offset_lengths(strand)
    for k in range(3):
        arrs[k][:] = default[k]
    for e in strand.springs.entries:
        arrs[e.j - e.i - 1][e.i] = e.rest_length
    return arrs


def assemble(strand: Strand, state: StrandState, ghosts: Optional[GhostConfig],
             params: SimParams, external_forces: np.ndarray, dt: float,
             root_velocity: Optional[np.ndarray] = None,
             anchors=None) -> BandedSystem:
    """Assemble the implicit velocity system for one substep.

    ``root_velocity=None`` leaves the strand free (no pinned row); otherwise
    the root row/column are eliminated symmetrically with the kinematic root
    velocity on the rhs. ``anchors`` is an optional (kappa, pos, vel) triple
    of per-particle grab springs.
    """
    if not state.is_finite():
        raise DivergenceError("non-finite state passed to assemble")
    n = strand.particle_count
    sys_ = BandedSystem.zeros(n)
    r1, r2, r3 = _spring_rest_arrays(strand)
    if ghosts is None or (params.kappa_integrity == 0.0 and params.kappa_angular == 0.0):
        y_int = state.positions
        y_ang = state.positions
        w = np.zeros((n, 3))
        k_int = 0.0
        k_ang = 0.0
    else:
        y_int = ghosts.positions
        y_ang = ghosts.shape_positions
        w = ghosts.velocities
        k_int = params.kappa_integrity
        k_ang = params.kappa_angular
    if anchors is None:
        a_k = np.zeros(n)
        a_pos = np.zeros((n, 3))
        a_vel = np.zeros((n, 3))
    else:
        a_k, a_pos, a_vel = anchors
    pin = root_velocity is not None
    rv = np.zeros(3) if root_velocity is None else np.asarray(root_velocity, dtype=np.float64)
    kernels.assemble_strand(
        np.ascontiguousarray(state.positions), np.ascontiguousarray(state.velocities),
        strand.masses, state.plasticity,
        r1, r2, r3,
        float(params.kappa_edge), float(params.kappa_bend()), float(params.kappa_tors()),
        float(k_int), float(k_ang),
        float(params.damping), np.ascontiguousarray(external_forces, dtype=np.float64),
        np.ascontiguousarray(y_int), np.ascontiguousarray(y_ang), np.ascontiguousarray(w),
        a_k, a_pos, a_vel,
        float(dt), pin, rv,
        sys_.bands, sys_.rhs)
    return sys_


def assemble_plain_ms(strand: Strand, state: StrandState, params: SimParams,
                      external_forces: np.ndarray, dt: float,
                      root_velocity: Optional[np.ndarray] = None) -> BandedSystem:
    """Plain mass-spring assembly path (no ghost terms in the code at all)."""
    if not state.is_finite():
        raise DivergenceError("non-finite state passed to assemble")
    n = strand.particle_count
    sys_ = BandedSystem.zeros(n)
    r1, r2, r3 = _spring_rest_arrays(strand)
    pin = root_velocity is not None
    rv = np.zeros(3) if root_velocity is None else np.asarray(root_velocity, dtype=np.float64)
    kernels.assemble_strand_ms(
        np.ascontiguousarray(state.positions), np.ascontiguousarray(state.velocities),
        strand.masses,
        r1, r2, r3,
        float(params.kappa_edge), float(params.kappa_bend()), float(params.kappa_tors()),
        float(params.damping), np.ascontiguousarray(external_forces, dtype=np.float64),
        float(dt), pin, rv,
        sys_.bands, sys_.rhs)
    return sys_


def solve_banded(system: BandedSystem, strand_id: int = -1) -> np.ndarray:
    """Exact solve via the two-sweep block LU; raises on singular blocks."""
    bands = system.bands.copy()
    rhs = system.rhs.copy()
    out = np.empty((system.n, 3))
    err = kernels.solve_banded_inplace(bands, rhs, out)
    if err != 0:
        raise SingularBlockError(err - 1, strand_id)
    return out


def substep_integrate(strand: Strand, state: StrandState, ghosts: Optional[GhostConfig],
                      params: SimParams, external_forces: np.ndarray, dt: float,
                      root_velocity: Optional[np.ndarray] = None,
                      ghost_tracks=None) -> StrandState:
    """Run params.substeps assemble/solve/position-update iterations.

    Direction matrices are recomputed from positions at the start of every
    substep. ``ghost_tracks`` optionally supplies per-substep ghost arrays
    (y_int, y_ang, w, root_v) with leading dimension substeps; by default the
    current ghost state is held fixed across the frame.
    """
    m = params.substeps
    dt_sub = dt / m
    n = strand.particle_count
    state = state.copy()
    for step in range(m):
        if ghost_tracks is not None:
            y_int, y_ang, w, root_v = ghost_tracks
            gc = GhostConfig(y_int[step], w[step], np.zeros((n, 3)), y_ang[step])
            rv = root_v[step]
        else:
            gc = ghosts
            rv = root_velocity
        sys_ = assemble(strand, state, gc, params, external_forces, dt_sub, rv)
        v_new = solve_banded(sys_)
        state.velocities = v_new
        state.positions = state.positions + dt_sub * v_new
        if not np.isfinite(state.positions).all() or np.abs(state.positions).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"position blow-up at substep {step}")
    return state


def apply_inextensibility(strand: Strand, state: StrandState, dt: float,
                          tolerance: float = 1e-4, max_passes: int = 8) -> float:
    """Follow-the-leader edge-length projection, root to tip, in place.

    Velocities absorb the displacement (V += dX/dt). Returns the final
    maximum relative edge error.
    """
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    rest = np.linalg.norm(np.diff(strand.rest_positions, axis=0), axis=1)
    xs = state.positions.reshape(1, -1, 3)
    vs = state.velocities.reshape(1, -1, 3)
    strain = np.zeros(1)
    kernels.ftl_batch(xs, vs, rest.reshape(1, -1), float(dt), float(tolerance),
                      max_passes, strain)
    return float(strain[0])


def integrate_batch_arrays(batch, f_ext, ghost_arrays, dt_sub: int, substeps: int):
    """Kernel wrapper for a batch of equal-length strands; see runtime module."""
    y_int, y_ang, w, root_v = ghost_arrays
    status = np.zeros(batch.count, dtype=np.int64)
    degenerate = np.zeros(batch.count, dtype=np.int64)
    kernels.integrate_batch(batch.x, batch.v, batch.masses, batch.plasticity,
                            batch.rest1, batch.rest2, batch.rest3,
                            batch.k_edge, batch.k_bend, batch.k_tors,
                            batch.k_int, batch.k_ang,
                            batch.gamma, f_ext,
                            y_int, y_ang, w, root_v,
                            batch.anchor_k, batch.anchor_pos, batch.anchor_vel,
                            float(dt_sub), substeps, True,
                            status, degenerate)
    return status, degenerate


def check_batch_status(status: np.ndarray, strand_labels=None):
    """Raise the appropriate solver error for the first bad strand."""
    bad = np.nonzero(status != 0)[0]
    if bad.size == 0:
        return
    s = int(bad[0])
    label = s if strand_labels is None else strand_labels[s]
    code = int(status[s])
    if code == STATUS_DIVERGED:
        raise DivergenceError(f"strand {label}")
    raise SingularBlockError(code - 1, label)

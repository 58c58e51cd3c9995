"""Grid-based strand-strand coupling: rasterize, regularize, transfer back.

The Eulerian grid is cell-centered and anchored to the head transform: sample
positions are mapped into the head-local frame before scattering, so the grid
rides rigidly with the head. Velocities stay in world frame.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .transforms import RigidTransform

MASS_EPS = 1e-12


@dataclass
class EulerianGrid:
    resolution: tuple          # (nx, ny, nz) cells
    origin: np.ndarray         # head-local corner, meters
    cell_size: float
    anchor: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        nx, ny, nz = self.resolution
        self.mass = np.zeros((nx, ny, nz))
        self.momentum = np.zeros((nx, ny, nz, 3))
        self.velocity = np.zeros((nx, ny, nz, 3))
        self.skipped_samples = 0

    @staticmethod
    def from_bounds(lo, hi, resolution) -> "EulerianGrid":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        res = tuple(int(r) for r in resolution)
        h = float(np.max((hi - lo) / np.asarray(res)))
        return EulerianGrid(res, lo, h)

    def clear(self):
        self.mass[:] = 0.0
        self.momentum[:] = 0.0
        self.velocity[:] = 0.0
        self.skipped_samples = 0

    def copy_fields(self) -> "EulerianGrid":
        """Snapshot for FLIP deltas: velocity and mass only (momentum is
        derivable and never read from snapshots)."""
        g = EulerianGrid(self.resolution, self.origin.copy(), self.cell_size, self.anchor)
        g.mass = self.mass.copy()
        g.velocity = self.velocity.copy()
        return g

    def to_local(self, points):
        return self.anchor.apply_inverse(points)

    def total_momentum(self) -> np.ndarray:
        return self.momentum.reshape(-1, 3).sum(axis=0)

    def total_mass(self) -> float:
        return float(self.mass.sum())


def strand_samples(positions_list, velocities_list, masses_list, segment_midpoints=True):
    """Flatten per-strand arrays into scatter samples.

    Adds one midpoint sample per segment (average mass and velocity) so thin
    strands still register between particles. Sample order is fixed by strand
    order, which keeps accumulation deterministic.
    """
    pts, vels, ms = [], [], []
    for pos, vel, mass in zip(positions_list, velocities_list, masses_list):
        pts.append(pos)
        vels.append(vel)
        ms.append(mass)
        if segment_midpoints and pos.shape[0] >= 2:
            pts.append(0.5 * (pos[1:] + pos[:-1]))
            vels.append(0.5 * (vel[1:] + vel[:-1]))
            ms.append(0.5 * (mass[1:] + mass[:-1]))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(vels), np.concatenate(ms)


def rasterize(grid: EulerianGrid, positions, velocities, masses):
    """Scatter samples (world frame) onto the grid with trilinear weights."""
    grid.clear()
    pts = np.ascontiguousarray(grid.to_local(positions), dtype=np.float64)
    vels = np.ascontiguousarray(velocities, dtype=np.float64)
    ms = np.ascontiguousarray(masses, dtype=np.float64)
    nx, ny, nz = grid.resolution
    grid.skipped_samples = kernels.scatter_trilinear(
        pts, ms, vels, grid.origin, grid.cell_size, nx, ny, nz,
        grid.mass, grid.momentum)
    nonzero = grid.mass > MASS_EPS
    grid.velocity[:] = 0.0
    grid.velocity[nonzero] = grid.momentum[nonzero] / grid.mass[nonzero][:, None]
    return grid


def grid_regularize(grid: EulerianGrid, friction_strength: float, iterations: int = 1,
                    pressure_projection: bool = False):
    """Mass-weighted 7-point velocity diffusion blended by friction_strength.

    Models aggregate inter-hair friction. Total grid momentum is restored
    exactly after each pass (the weighted average alone drifts at domain
    boundaries). friction_strength 0 is the identity.
    """
    if friction_strength < 0.0 or friction_strength > 1.0:
        raise ValueError("friction_strength must be in [0, 1]")
    if friction_strength == 0.0 or iterations < 1:
        if pressure_projection:
            _project_divergence_free(grid)
        return grid
    m = grid.mass
    massful = m > MASS_EPS
    total_mass = float(m[massful].sum())
    from .backend import NUMBA_ENABLED

    for _ in range(iterations):
        v = grid.velocity
        if NUMBA_ENABLED:
            v_new = np.empty_like(v)
            kernels.diffuse_pass(m, v, float(friction_strength), v_new)
        else:
            v_new = _diffuse_pass_numpy(m, v, friction_strength, massful)
        if total_mass > 0.0:
            drift = (m[..., None] * (v_new - v)).reshape(-1, 3).sum(axis=0)
            v_new[massful] -= drift / total_mass
        grid.velocity = v_new
    grid.momentum = m[..., None] * grid.velocity
    if pressure_projection:
        _project_divergence_free(grid)
    return grid


def _diffuse_pass_numpy(m, v, strength, massful):
    mom = m[..., None] * v
    num = mom.copy()
    den = m.copy()
    for axis in range(3):
        for shift in (1, -1):
            num += _shifted(mom, axis, shift)
            den += _shifted(m, axis, shift)
    avg = np.zeros_like(v)
    ok = den > MASS_EPS
    avg[ok] = num[ok] / den[ok][:, None]
    v_new = (1.0 - strength) * v + strength * avg
    v_new[~massful] = 0.0
    return v_new


def _shifted(a, axis, shift):
    """Zero-padded neighbor shift along one axis."""
    out = np.zeros_like(a)
    src = [slice(None)] * 3 + [slice(None)] * (a.ndim - 3)
    dst = list(src)
    if shift == 1:
        src[axis] = slice(1, None)
        dst[axis] = slice(0, -1)
    else:
        src[axis] = slice(0, -1)
        dst[axis] = slice(1, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _project_divergence_free(grid: EulerianGrid, iterations: int = 40):
    """Optional Jacobi pressure projection on massful cells (default off in
    scenes; volume-preservation experiments only)."""
    m = grid.mass
    fluid = m > MASS_EPS
    if not fluid.any():
        return
    h = grid.cell_size
    v = grid.velocity
    div = np.zeros(m.shape)
    for axis in range(3):
        vp = _shifted(v[..., axis], axis, 1)
        vm = _shifted(v[..., axis], axis, -1)
        div += (vp - vm) / (2.0 * h)
    div[~fluid] = 0.0
    p = np.zeros(m.shape)
    h2 = h * h
    for _ in range(iterations):
        acc = np.zeros(m.shape)
        cnt = np.zeros(m.shape)
        for axis in range(3):
            for shift in (1, -1):
                acc += _shifted(p, axis, shift)
                nb = _shifted(fluid.astype(np.float64), axis, shift)
                cnt += nb
        p_new = np.zeros_like(p)
        ok = fluid & (cnt > 0)
        p_new[ok] = (acc[ok] - h2 * div[ok]) / cnt[ok]
        p = p_new
    for axis in range(3):
        gp = (_shifted(p, axis, 1) - _shifted(p, axis, -1)) / (2.0 * h)
        v[..., axis] -= np.where(fluid, gp, 0.0)
    grid.velocity = v
    grid.momentum = m[..., None] * v


def transfer_back(grid_before: EulerianGrid, grid_after: EulerianGrid,
                  positions, velocities, flip_blend: float):
    """FLIP/PIC blend: v <- a*(v + dgrid) + (1-a)*grid_after, trilinear gather.

    Particles gathering zero mass keep their velocity.
    """
    pts = np.ascontiguousarray(grid_before.to_local(positions), dtype=np.float64)
    nx, ny, nz = grid_before.resolution
    k = pts.shape[0]
    v_before = np.empty((k, 3))
    v_after = np.empty((k, 3))
    m_before = np.empty(k)
    m_after = np.empty(k)
    kernels.gather_trilinear(pts, grid_before.origin, grid_before.cell_size,
                             nx, ny, nz, grid_before.velocity, grid_before.mass,
                             v_before, m_before)
    kernels.gather_trilinear(pts, grid_after.origin, grid_after.cell_size,
                             nx, ny, nz, grid_after.velocity, grid_after.mass,
                             v_after, m_after)
    a = float(flip_blend)
    out = np.asarray(velocities, dtype=np.float64).copy()
    ok = (m_before > MASS_EPS) & (m_after > MASS_EPS)
    out[ok] = a * (out[ok] + v_after[ok] - v_before[ok]) + (1.0 - a) * v_after[ok]
    return out


def resolve_pairwise(positions, velocities, masses, strand_ids,
                     radius: float, stiffness: float):
    """Equal-and-opposite separating impulses between close particles of
    different strands; returns (new_positions, new_velocities, pair_count)."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    pts = np.ascontiguousarray(positions, dtype=np.float64)
    vel = np.ascontiguousarray(velocities, dtype=np.float64)
    ms = np.ascontiguousarray(masses, dtype=np.float64)
    ids = np.ascontiguousarray(strand_ids, dtype=np.int64)
    d_pos = np.zeros_like(pts)
    d_vel = np.zeros_like(vel)
    pairs = kernels.pairwise_impulses(pts, vel, ms, ids, float(radius),
                                      float(stiffness), d_pos, d_vel)
    return pts + d_pos, vel + d_vel, int(pairs)

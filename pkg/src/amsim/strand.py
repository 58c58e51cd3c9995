"""Strand domain types and force evaluation.

A strand is a chain of particles with edge/bending/torsion springs plus a
one-way biphasic coupling (integrity + angular springs) to a rigid ghost copy
of its rest shape. The ghost never feels the real particles.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .transforms import RigidTransform

SPRING_KINDS = ("edge", "bending", "torsion")
DEGENERATE_EPS = 1e-12


class StrandError(ValueError):
    pass


@dataclass
class SpringEntry:
    i: int
    j: int
    kind: str
    stiffness: float
    rest_length: float


@dataclass
class SpringNetwork:
    """Edge (i,i+1), bending (i,i+2) and torsion (i,i+3) springs of one strand."""

    entries: list

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.kind not in SPRING_KINDS:
                raise StrandError(f"unknown spring kind {e.kind!r}")
            offset = {"edge": 1, "bending": 2, "torsion": 3}[e.kind]
            if e.j - e.i != offset:
                raise StrandError(f"{e.kind} spring must connect (i, i+{offset}), got ({e.i}, {e.j})")
            if abs(e.i - e.j) > 3:
                raise StrandError("spring outside heptadiagonal band")
            key = (e.i, e.j)
            if key in seen:
                raise StrandError(f"duplicate spring {key}")
            seen.add(key)

    @staticmethod
    def chain(rest_positions, kappa_edge, kappa_bending=None, kappa_torsion=None) -> "SpringNetwork":
        """Full edge/bending/torsion chain with rest lengths from rest positions."""
        rest = np.asarray(rest_positions, dtype=np.float64)
        n = rest.shape[0]
        kb = kappa_edge if kappa_bending is None else kappa_bending
        kt = kappa_edge if kappa_torsion is None else kappa_torsion
        entries = []
        for offset, kind, kappa in ((1, "edge", kappa_edge), (2, "bending", kb), (3, "torsion", kt)):
            for i in range(n - offset):
                rl = float(np.linalg.norm(rest[i + offset] - rest[i]))
                entries.append(SpringEntry(i, i + offset, kind, float(kappa), rl))
        return SpringNetwork(entries)


@dataclass
class Strand:
    rest_positions: np.ndarray  # (n, 3) meters
    masses: np.ndarray          # (n,) kg
    springs: SpringNetwork
    root_index: int = 0

    def __post_init__(self):
        self.rest_positions = np.asarray(self.rest_positions, dtype=np.float64).reshape(-1, 3)
        self.masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        n = self.rest_positions.shape[0]
        if n < 2:
            raise StrandError("strand needs at least 2 particles")
        if self.masses.shape[0] != n:
            raise StrandError("masses length mismatch")
        if np.any(self.masses <= 0.0):
            raise StrandError("masses must be positive")
        edges = np.linalg.norm(np.diff(self.rest_positions, axis=0), axis=1)
        if np.any(edges <= 0.0):
            raise StrandError("consecutive rest positions must be distinct")
        if self.root_index != 0:
            raise StrandError("root particle must be index 0")

    @property
    def particle_count(self) -> int:
        return self.rest_positions.shape[0]

    def rest_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.rest_positions, axis=0), axis=1)))


def make_strand(rest_positions, total_mass, kappa_edge,
                kappa_bending=None, kappa_torsion=None) -> Strand:
    """Uniform-mass strand with the full spring chain."""
    rest = np.asarray(rest_positions, dtype=np.float64).reshape(-1, 3)
    n = rest.shape[0]
    masses = np.full(n, float(total_mass) / n)
    return Strand(rest, masses, SpringNetwork.chain(rest, kappa_edge, kappa_bending, kappa_torsion))


@dataclass
class StrandState:
    positions: np.ndarray   # (n, 3)
    velocities: np.ndarray  # (n, 3)
    plasticity: np.ndarray  # (n,) stiffness multiplier in (0, 1]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.velocities = np.asarray(self.velocities, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        if self.plasticity is None:
            self.plasticity = np.ones(n)
        self.plasticity = np.asarray(self.plasticity, dtype=np.float64).reshape(-1)
        if self.velocities.shape[0] != n or self.plasticity.shape[0] != n:
            raise StrandError("state array length mismatch")

    @staticmethod
    def at_rest(strand: Strand) -> "StrandState":
        n = strand.particle_count
        return StrandState(strand.rest_positions.copy(), np.zeros((n, 3)), np.ones(n))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.positions).all() and np.isfinite(self.velocities).all())

    def copy(self) -> "StrandState":
        return StrandState(self.positions.copy(), self.velocities.copy(), self.plasticity.copy())


@dataclass
class GhostConfig:
    """Rigid ghost copy of the rest shape, one-way coupled to the strand.

    ``positions`` are the integrity targets (rest + preload offsets, head
    transformed); ``shape_positions`` are the un-offset rest shape used by the
    angular spring. The preload offset only shifts the integrity coupling: the
    angular reference stays on the input configuration so both couplings are
    at equilibrium for an unsagged strand.
    """

    positions: np.ndarray        # (n, 3) integrity targets Y
    velocities: np.ndarray       # (n, 3) rigid velocities W
    preload_offsets: np.ndarray  # (n, 3) head-local offsets
    shape_positions: np.ndarray  # (n, 3) angular reference (no offsets)

    @staticmethod
    def from_rest(strand: Strand, preload_offsets=None) -> "GhostConfig":
        n = strand.particle_count
        off = np.zeros((n, 3)) if preload_offsets is None else np.asarray(preload_offsets, dtype=np.float64)
        return GhostConfig(strand.rest_positions + off, np.zeros((n, 3)), off,
                           strand.rest_positions.copy())

    def update_from_transform(self, strand: Strand, transform: RigidTransform, dt: Optional[float] = None):
        """Advance ghost state by the head transform; W from finite difference."""
        shape_new = transform.apply(strand.rest_positions)
        y_new = transform.apply(strand.rest_positions + self.preload_offsets)
        if dt is not None and dt > 0.0:
            self.velocities = (y_new - self.positions) / dt
        else:
            self.velocities = np.zeros_like(y_new)
        self.positions = y_new
        self.shape_positions = shape_new


@dataclass
class NonHookeanCurve:
    """Piecewise-linear stiffness multiplier over integrity elongation.

    Control points (elongation, multiplier) with strictly increasing
    elongations, multiplier 1 at zero elongation, constant extrapolation past
    the last point. With ``plastic`` the evaluated multiplier is remembered as
    a running minimum (permanent shape change).
    """

    points: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0]]))
    yield_elongation: float = 0.0
    plastic: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.points.shape[0] < 1:
            raise StrandError("curve needs at least one control point")
        if self.points[0, 0] != 0.0 or self.points[0, 1] != 1.0:
            raise StrandError("curve must start at (0, 1)")
        if np.any(np.diff(self.points[:, 0]) <= 0.0):
            raise StrandError("curve elongations must be strictly increasing")

    @staticmethod
    def identity() -> "NonHookeanCurve":
        return NonHookeanCurve()

    @staticmethod
    def softening(yield_elongation: float, floor: float = 0.1,
                  span: float = 2.0, plastic: bool = True) -> "NonHookeanCurve":
        """Full stiffness up to the yield elongation, linear drop to ``floor``."""
        if yield_elongation <= 0.0:
            raise StrandError("yield elongation must be positive")
        pts = [[0.0, 1.0], [yield_elongation, 1.0], [yield_elongation * span, floor]]
        return NonHookeanCurve(np.array(pts), yield_elongation, plastic)

    def __call__(self, elongation):
        d = np.asarray(elongation, dtype=np.float64)
        return np.interp(d, self.points[:, 0], self.points[:, 1])

    def is_identity(self) -> bool:
        return not self.plastic and bool(np.all(self.points[:, 1] == 1.0))


@dataclass
class SimParams:
    kappa_edge: float = 1.0e6       # N/m, shared by edge/bending/torsion by default
    kappa_integrity: float = 1.0e2  # N/m
    kappa_angular: float = 1.0e2    # N/rad
    kappa_bending: Optional[float] = None
    kappa_torsion: Optional[float] = None
    damping: float = 0.5            # gamma; G_i = gamma * m_i
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, -9.81, 0.0]))
    dt: float = 1.0 / 360.0
    substeps: int = 1
    friction: float = 0.3
    flip_blend: float = 0.95
    non_hookean: NonHookeanCurve = field(default_factory=NonHookeanCurve.identity)
    strand_mass: float = 0.01       # kg per strand, uniform per particle
    preload: bool = True
    inext_tolerance: float = 1e-4

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        if self.dt <= 0.0:
            raise StrandError("dt must be positive")
        if self.substeps < 1:
            raise StrandError("substeps must be >= 1")
        for name in ("kappa_edge", "kappa_integrity", "kappa_angular"):
            if getattr(self, name) < 0.0:
                raise StrandError(f"{name} must be non-negative")
        if not 0.0 <= self.flip_blend <= 1.0:
            raise StrandError("flip_blend must be in [0, 1]")

    def kappa_bend(self) -> float:
        return self.kappa_edge if self.kappa_bending is None else self.kappa_bending

    def kappa_tors(self) -> float:
        return self.kappa_edge if self.kappa_torsion is None else self.kappa_torsion


# ---------------------------------------------------------------------------
# Force operations
# ---------------------------------------------------------------------------

def integrity_force(x, y, kappa_integrity, multiplier=1.0):
    """Zero-rest-length spring force pulling a particle toward its ghost."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = y - x
    dist = np.linalg.norm(d)
    if dist == 0.0:
        return np.zeros(3)
    return (multiplier * kappa_integrity) * d


def angular_force(x_i, x_next, y_next, kappa_angular, diagnostics=None):
    """Angular ghost spring on particle i+1.

    Tension is kappa_angular times the angle between segments x_i->y_{i+1}
    and x_i->x_{i+1}, directed from the particle toward its ghost. Degenerate
    segments produce zero force and flag diagnostics.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    y_next = np.asarray(y_next, dtype=np.float64)
    to_ghost = y_next - x_next
    gd = np.linalg.norm(to_ghost)
    if gd == 0.0:
        return np.zeros(3)
    seg_real = x_next - x_i
    seg_ghost = y_next - x_i
    lr = np.linalg.norm(seg_real)
    lg = np.linalg.norm(seg_ghost)
    if lr < DEGENERATE_EPS or lg < DEGENERATE_EPS:
        if diagnostics is not None:
            diagnostics["degenerate_segments"] = diagnostics.get("degenerate_segments", 0) + 1
        return np.zeros(3)
    cosang = np.clip(np.dot(seg_real, seg_ghost) / (lr * lg), -1.0, 1.0)
    dtheta = np.arccos(cosang)
    return (kappa_angular * dtheta / gd) * to_ghost


def local_spring_forces(state: StrandState, network: SpringNetwork, diagnostics=None):
    """Per-particle forces from all edge/bending/torsion springs."""
    forces = np.zeros_like(state.positions)
    for e in network.entries:
        d = state.positions[e.j] - state.positions[e.i]
        dist = np.linalg.norm(d)
        if dist <= 0.0:
            if diagnostics is not None:
                diagnostics["degenerate_springs"] = diagnostics.get("degenerate_springs", 0) + 1
            continue
        f = (e.stiffness * (dist - e.rest_length) / dist) * d
        forces[e.i] += f
        forces[e.j] -= f
    return forces


def biphasic_forces(state: StrandState, ghosts: GhostConfig, params: SimParams, diagnostics=None):
    """Integrity plus angular ghost forces; zero arrays when both couplings are off."""
    n = state.positions.shape[0]
    forces = np.zeros((n, 3))
    if params.kappa_integrity > 0.0:
        for i in range(n):
            forces[i] += integrity_force(state.positions[i], ghosts.positions[i],
                                         params.kappa_integrity, state.plasticity[i])
    if params.kappa_angular > 0.0:
        for i in range(n - 1):
            forces[i + 1] += angular_force(state.positions[i], state.positions[i + 1],
                                           ghosts.shape_positions[i + 1],
                                           params.kappa_angular, diagnostics)
    return forces


def total_forces(strand: Strand, state: StrandState, ghosts: GhostConfig,
                 params: SimParams, external=None, diagnostics=None):
    """Local springs + biphasic coupling + external; reduces to plain MS at
    kappa_integrity = kappa_angular = 0."""
    forces = local_spring_forces(state, strand.springs, diagnostics)
    if params.kappa_integrity > 0.0 or params.kappa_angular > 0.0:
        forces += biphasic_forces(state, ghosts, params, diagnostics)
    if external is not None:
        forces += external
    return forces


def non_hookean_update(state: StrandState, ghosts: GhostConfig, curve: NonHookeanCurve):
    """Refresh plasticity multipliers from current integrity elongations."""
    d = np.linalg.norm(state.positions - ghosts.positions, axis=1)
    m_new = curve(d)
    if curve.plastic:
        state.plasticity = np.minimum(state.plasticity, m_new)
    else:
        state.plasticity = m_new
    return state.plasticity


def integrity_preload(strand: Strand, kappa_integrity: float, gravity):
    """Ghost offsets that place integrity tension in equilibrium with weight.

    Offsets point opposite gravity (ghost sits above the particle) so the
    pull toward the ghost cancels the weight exactly at initialization; the
    root is kinematic and gets no offset.
    """
    if kappa_integrity <= 0.0:
        raise StrandError("integrity preload requires kappa_integrity > 0")
    g = np.asarray(gravity, dtype=np.float64).reshape(3)
    offsets = -np.outer(strand.masses / kappa_integrity, g)
    offsets[strand.root_index] = 0.0
    return offsets

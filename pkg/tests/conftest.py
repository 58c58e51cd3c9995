import numpy as np
import pytest

from amsim.strand import SimParams, SpringNetwork, Strand, StrandState, make_strand


def random_strand(rng, n=5, kappa=10.0, scale=0.1):
    """Random open polyline strand with distinct consecutive points."""
    while True:
        rest = rng.normal(0.0, scale, (n, 3))
        edges = np.linalg.norm(np.diff(rest, axis=0), axis=1)
        if np.all(edges > 1e-3):
            break
    return Strand(rest, np.full(n, 0.01), SpringNetwork.chain(rest, kappa))


def hanging_rest(n=30, length=0.3):
    """Straight strand hanging along -y from the origin."""
    ys = -np.linspace(0.0, length, n)
    rest = np.zeros((n, 3))
    rest[:, 1] = ys
    return rest


def helix_rest(n=30, radius=0.03, pitch=0.012, turns=4.0):
    t = np.linspace(0.0, turns * 2.0 * np.pi, n)
    rest = np.stack([radius * np.cos(t), -pitch * t / (2.0 * np.pi) * 4.0, radius * np.sin(t)], axis=1)
    return rest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def basic_params():
    return SimParams(kappa_edge=100.0, kappa_integrity=10.0, kappa_angular=5.0,
                     damping=0.1, dt=1e-3, substeps=1, strand_mass=0.05)

"""Scene configuration: a versioned JSON document tying together strand
assets, solids with transform tracks, simulation parameters, grid settings,
wind, and output options.

Schema (version 1), all sections except "strands" optional:

    {
      "version": 1,
      "strands": "asset.strands" | {"path": ..., "total_mass": ...},
      "params": {"kappa_edge": ..., "dt": ..., "substeps": ..., ...},
      "grid": {"resolution": [32,32,32], "bounds": [[...],[...]],
               "friction_strength": 0.5, "iterations": 1,
               "pressure_projection": false,
               "pair_radius": 0.004, "pair_stiffness": 0.5},
      "head": {"track": [{"t": 0.0, "translate": [0,0,0], "quat": [1,0,0,0]}]},
      "solids": [{"mesh": "head.obj", "resolution": 48, "padding": 0.1,
                  "cache": "head.sdf", "track": [...]}],
      "wind": {"track": [{"t": 0.0, "force": [0,0,0]}],
               "curl": {"amplitude": 0.0, "scale": 1.0, "seed": 0}},
      "output": {"stride": 1},
      "stages": {"grid": true, "pairwise": true, "collisions": true,
                 "inextensibility": true, "non_hookean": true},
      "seed": 0
    }
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assets import StrandAsset, load_mesh, load_strands
from .sdf import build_sdf, load_sdf, save_sdf
from .strand import NonHookeanCurve, SimParams, StrandError
from .transforms import TransformTrack

SCENE_VERSION = 1


class SceneValidationError(ValueError):
    """Scene rejection with a machine-readable code."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"[{code}] {message}")


@dataclass
class WindField:
    """Uniform time-varying force plus optional curl-noise perturbation."""

    times: np.ndarray = field(default_factory=lambda: np.zeros(1))
    forces: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    curl_amplitude: float = 0.0
    curl_scale: float = 1.0
    curl_seed: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.forces = np.asarray(self.forces, dtype=np.float64).reshape(-1, 3)
        if np.any(np.diff(self.times) <= 0.0):
            raise SceneValidationError("keyframes_nonmonotone",
                                       "wind keyframe times must be strictly increasing")
        rng = np.random.default_rng(self.curl_seed)
        self._freqs = rng.uniform(0.5, 2.0, (3, 3)) * self.curl_scale
        self._phases = rng.uniform(0.0, 2.0 * np.pi, 3)

    def base_force(self, t: float) -> np.ndarray:
        if t <= self.times[0]:
            return self.forces[0].copy()
        if t >= self.times[-1]:
            return self.forces[-1].copy()
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        u = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - u) * self.forces[k] + u * self.forces[k + 1]

    def at(self, t: float, positions: np.ndarray) -> np.ndarray:
        """Per-particle wind force (N) at world positions."""
        base = self.base_force(t)
        out = np.broadcast_to(base, positions.shape).copy()
        if self.curl_amplitude > 0.0:
            out += self.curl_amplitude * self._curl(positions, t)
        return out

    def _curl(self, p, t):
        # analytic curl of psi_j = sin(k_j . p + phase_j + t): divergence-free
        k = self._freqs
        arg = p @ k.T + self._phases + t
        c = np.cos(arg)
        curl = np.empty_like(p)
        curl[:, 0] = c[:, 2] * k[2, 1] - c[:, 1] * k[1, 2]
        curl[:, 1] = c[:, 0] * k[0, 2] - c[:, 2] * k[2, 0]
        curl[:, 2] = c[:, 1] * k[1, 0] - c[:, 0] * k[0, 1]
        return curl


@dataclass
class GridConfig:
    resolution: tuple = (32, 32, 32)
    bounds_lo: np.ndarray = field(default_factory=lambda: np.array([-0.5, -0.8, -0.5]))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.4, 0.5]))
    friction_strength: float = 0.5
    iterations: int = 1
    pressure_projection: bool = False
    pair_radius: float = 0.004
    pair_stiffness: float = 0.5


@dataclass
class SolidConfig:
    mesh_path: str
    resolution: int = 48
    padding: float = 0.1
    cache_path: str = ""
    sign_method: str = "parity"
    track: TransformTrack = field(default_factory=TransformTrack.static_track)


@dataclass
class StageToggles:
    grid: bool = True
    pairwise: bool = True
    collisions: bool = True
    inextensibility: bool = True
    non_hookean: bool = True


@dataclass
class SceneConfig:
    asset: StrandAsset
    params: SimParams
    grid: GridConfig = field(default_factory=GridConfig)
    head_track: TransformTrack = field(default_factory=TransformTrack.static_track)
    solids: list = field(default_factory=list)       # [SolidConfig]
    wind: WindField = field(default_factory=WindField)
    stages: StageToggles = field(default_factory=StageToggles)
    output_stride: int = 1
    seed: int = 0
    base_dir: Path = field(default_factory=Path)
    report: list = field(default_factory=list)       # validation warnings

    def build_sdfs(self) -> list:
        """Load or build every solid's SDF (cache honored when present)."""
        fields = []
        for solid in self.solids:
            cache = Path(solid.cache_path) if solid.cache_path else None
            if cache and cache.exists():
                sdf = load_sdf(cache)
            else:
                mesh = load_mesh(solid.mesh_path)
                sdf = build_sdf(mesh, solid.resolution, solid.padding, solid.sign_method)
                if cache:
                    save_sdf(sdf, cache)
            sdf.track = solid.track
            sdf.update_motion(0.0)
            fields.append(sdf)
        return fields


def _track_from_json(entries, what: str) -> TransformTrack:
    if not entries:
        return TransformTrack.static_track()
    times = [e["t"] for e in entries]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise SceneValidationError("keyframes_nonmonotone",
                                   f"{what} keyframe times must be strictly increasing")
    trans = [e.get("translate", [0.0, 0.0, 0.0]) for e in entries]
    rots = [e.get("quat", [1.0, 0.0, 0.0, 0.0]) for e in entries]
    return TransformTrack(np.array(times), np.array(trans), np.array(rots))


def _params_from_json(raw: dict) -> SimParams:
    known = {
        "kappa_edge", "kappa_integrity", "kappa_angular", "kappa_bending",
        "kappa_torsion", "damping", "gravity", "dt", "substeps", "friction",
        "flip_blend", "strand_mass", "preload", "inext_tolerance",
    }
    kwargs = {k: v for k, v in raw.items() if k in known}
    if "non_hookean" in raw:
        nh = raw["non_hookean"]
        kwargs["non_hookean"] = NonHookeanCurve(
            np.asarray(nh.get("points", [[0.0, 1.0]]), dtype=np.float64),
            float(nh.get("yield_elongation", 0.0)),
            bool(nh.get("plastic", False)))
    if float(raw.get("dt", 1.0)) <= 0.0:
        raise SceneValidationError("dt_nonpositive", "params.dt must be > 0")
    if int(raw.get("substeps", 1)) < 1:
        raise SceneValidationError("substeps_invalid", "params.substeps must be >= 1")
    for key in ("kappa_edge", "kappa_integrity", "kappa_angular"):
        if float(raw.get(key, 0.0)) < 0.0:
            raise SceneValidationError("stiffness_negative", f"params.{key} must be >= 0")
    if not 0.0 <= float(raw.get("flip_blend", 0.95)) <= 1.0:
        raise SceneValidationError("flip_blend_range", "params.flip_blend must be in [0, 1]")
    try:
        return SimParams(**kwargs)
    except StrandError as exc:
        raise SceneValidationError("params_invalid", str(exc)) from None


def load_scene(path) -> SceneConfig:
    """Load and validate a scene document; raises SceneValidationError on any
    hard violation, collects soft warnings into SceneConfig.report."""
    path = Path(path)
    if not path.exists():
        raise SceneValidationError("missing_file", f"scene file {path} not found")
    raw = json.loads(path.read_text())
    version = raw.get("version")
    if version != SCENE_VERSION:
        raise SceneValidationError("version_unsupported",
                                   f"scene version {version!r}, expected {SCENE_VERSION}")
    base = path.parent
    report = []

    strands_entry = raw.get("strands")
    if strands_entry is None:
        raise SceneValidationError("missing_strands", "scene has no strand asset")
    if isinstance(strands_entry, str):
        asset_path = base / strands_entry
    else:
        asset_path = base / strands_entry["path"]
    if not asset_path.exists():
        raise SceneValidationError("missing_file", f"strand asset {asset_path} not found")
    asset = load_strands(asset_path)
    if not isinstance(strands_entry, str) and "overrides" in strands_entry:
        asset.overrides = strands_entry["overrides"]

    params = _params_from_json(raw.get("params", {}))

    gc = GridConfig()
    g = raw.get("grid", {})
    if g:
        res = g.get("resolution", list(gc.resolution))
        if len(res) != 3 or any(int(r) < 2 for r in res):
            raise SceneValidationError("bad_grid", "grid.resolution needs three values >= 2")
        gc.resolution = tuple(int(r) for r in res)
        if "bounds" in g:
            lo, hi = g["bounds"]
            gc.bounds_lo = np.asarray(lo, dtype=np.float64)
            gc.bounds_hi = np.asarray(hi, dtype=np.float64)
            if np.any(gc.bounds_hi <= gc.bounds_lo):
                raise SceneValidationError("bad_grid", "grid.bounds must satisfy hi > lo")
        gc.friction_strength = float(g.get("friction_strength", gc.friction_strength))
        gc.iterations = int(g.get("iterations", gc.iterations))
        gc.pressure_projection = bool(g.get("pressure_projection", False))
        gc.pair_radius = float(g.get("pair_radius", gc.pair_radius))
        gc.pair_stiffness = float(g.get("pair_stiffness", gc.pair_stiffness))

    head_track = _track_from_json(raw.get("head", {}).get("track", []), "head")

    solids = []
    for entry in raw.get("solids", []):
        mesh_path = base / entry["mesh"]
        cache = entry.get("cache", "")
        if not mesh_path.exists():
            raise SceneValidationError("missing_file", f"solid mesh {mesh_path} not found")
        solids.append(SolidConfig(
            mesh_path=str(mesh_path),
            resolution=int(entry.get("resolution", 48)),
            padding=float(entry.get("padding", 0.1)),
            cache_path=str(base / cache) if cache else "",
            sign_method=entry.get("sign_method", "parity"),
            track=_track_from_json(entry.get("track", []), "solid")))

    wind_raw = raw.get("wind", {})
    track = wind_raw.get("track", [])
    curl = wind_raw.get("curl", {})
    if track:
        wind = WindField(np.array([e["t"] for e in track]),
                         np.array([e.get("force", [0, 0, 0]) for e in track]),
                         float(curl.get("amplitude", 0.0)),
                         float(curl.get("scale", 1.0)),
                         int(curl.get("seed", 0)))
    else:
        wind = WindField(curl_amplitude=float(curl.get("amplitude", 0.0)),
                         curl_scale=float(curl.get("scale", 1.0)),
                         curl_seed=int(curl.get("seed", 0)))

    st = raw.get("stages", {})
    stages = StageToggles(
        grid=bool(st.get("grid", True)),
        pairwise=bool(st.get("pairwise", True)),
        collisions=bool(st.get("collisions", True)),
        inextensibility=bool(st.get("inextensibility", True)),
        non_hookean=bool(st.get("non_hookean", True)))

    stride = int(raw.get("output", {}).get("stride", 1))
    if stride < 1:
        raise SceneValidationError("bad_output", "output.stride must be >= 1")
    if params.preload and params.kappa_integrity == 0.0:
        report.append("preload requested with kappa_integrity = 0; preload disabled")

    return SceneConfig(asset=asset, params=params, grid=gc, head_track=head_track,
                       solids=solids, wind=wind, stages=stages, output_stride=stride,
                       seed=int(raw.get("seed", 0)), base_dir=base, report=report)


def scene_dict(strands_path: str, **sections) -> dict:
    """Convenience builder for scene documents (tests and CLI fixtures)."""
    doc = {"version": SCENE_VERSION, "strands": strands_path}
    doc.update(sections)
    return doc

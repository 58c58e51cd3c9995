"""Strand asset, frame and mesh file formats.

Strand binary format "AMS1": little-endian, magic, u32 strand count, then per
strand a u32 vertex count followed by f32 xyz triples. The text twin is one
strand count line, then per strand a vertex count line and one "x y z" line
per vertex. Frames use magic "AMSF": u32 frame index, u32 total particle
count, f32 xyz triples in asset strand order. Meshes are an ASCII
indexed-triangle subset: "v x y z" and 1-based "f i j k" lines.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STRAND_MAGIC = b"AMS1"
FRAME_MAGIC = b"AMSF"


class AssetError(ValueError):
    pass


class MalformedHeaderError(AssetError):
    pass


class TruncatedPayloadError(AssetError):
    pass


class VersionMismatchError(AssetError):
    pass


@dataclass
class StrandAsset:
    vertex_counts: np.ndarray   # (S,) int
    positions: np.ndarray       # flat (total, 3) float, strand-contiguous
    overrides: dict = field(default_factory=dict)  # per-strand params, scene-provided

    def __post_init__(self):
        self.vertex_counts = np.asarray(self.vertex_counts, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if np.any(self.vertex_counts < 2):
            raise AssetError("every strand needs at least 2 vertices")
        if self.positions.shape[0] != int(self.vertex_counts.sum()):
            raise AssetError("flat position array length mismatch")

    @property
    def strand_count(self) -> int:
        return int(self.vertex_counts.shape[0])

    def strand_positions(self, s: int) -> np.ndarray:
        start = int(self.vertex_counts[:s].sum())
        return self.positions[start:start + int(self.vertex_counts[s])]

    @staticmethod
    def from_polylines(polylines) -> "StrandAsset":
        counts = np.array([len(p) for p in polylines], dtype=np.int64)
        flat = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1, 3)
                               for p in polylines])
        return StrandAsset(counts, flat)


def save_strands(asset: StrandAsset, path):
    path = Path(path)
    if path.suffix == ".txt":
        lines = [str(asset.strand_count)]
        for s in range(asset.strand_count):
            pts = asset.strand_positions(s)
            lines.append(str(pts.shape[0]))
            lines.extend(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in pts)
        path.write_text("\n".join(lines) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(STRAND_MAGIC)
        fh.write(struct.pack("<I", asset.strand_count))
        for s in range(asset.strand_count):
            pts = asset.strand_positions(s)
            fh.write(struct.pack("<I", pts.shape[0]))
            fh.write(pts.astype("<f4").tobytes())


def load_strands(path) -> StrandAsset:
    path = Path(path)
    if path.suffix == ".txt":
        return _load_strands_text(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise MalformedHeaderError(f"{path}: too short for a strand asset header")
    magic = data[:4]
    if magic != STRAND_MAGIC:
        if magic[:3] == b"AMS" and magic[3:4].isdigit():
            raise VersionMismatchError(f"{path}: unsupported strand format version {magic!r}")
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    off = 8
    counts = np.empty(count, dtype=np.int64)
    chunks = []
    for s in range(count):
        if off + 4 > len(data):
            raise TruncatedPayloadError(f"{path}: truncated at strand {s}")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        nbytes = 12 * n
        if off + nbytes > len(data):
            raise TruncatedPayloadError(f"{path}: truncated positions at strand {s}")
        pts = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off).reshape(n, 3)
        chunks.append(pts.astype(np.float64))
        counts[s] = n
        off += nbytes
    if count == 0:
        return StrandAsset(np.zeros(0, dtype=np.int64), np.zeros((0, 3)))
    return StrandAsset(counts, np.concatenate(chunks))


def _load_strands_text(path) -> StrandAsset:
    tokens = path.read_text().split()
    if not tokens:
        raise MalformedHeaderError(f"{path}: empty strand text file")
    try:
        pos = 0
        count = int(tokens[pos]); pos += 1
        polylines = []
        for _ in range(count):
            if pos >= len(tokens):
                raise TruncatedPayloadError(f"{path}: missing strand header")
            n = int(tokens[pos]); pos += 1
            need = 3 * n
            if pos + need > len(tokens):
                raise TruncatedPayloadError(f"{path}: missing vertex data")
            vals = np.array(tokens[pos:pos + need], dtype=np.float64).reshape(n, 3)
            pos += need
            polylines.append(vals)
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: unparsable strand text: {exc}") from None
    return StrandAsset.from_polylines(polylines)


def write_frame(path, frame_index: int, positions: np.ndarray):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<II", frame_index, positions.shape[0]))
        fh.write(positions.astype("<f4").tobytes())


def frame_bytes(frame_index: int, positions: np.ndarray) -> bytes:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    return (FRAME_MAGIC + struct.pack("<II", frame_index, positions.shape[0])
            + positions.astype("<f4").tobytes())


def read_frame(source) -> tuple:
    """Read one frame from a path or bytes; returns (index, positions)."""
    data = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    if len(data) < 12:
        raise MalformedHeaderError("frame too short")
    if data[:4] != FRAME_MAGIC:
        raise MalformedHeaderError(f"bad frame magic {data[:4]!r}")
    index, count = struct.unpack_from("<II", data, 4)
    need = 12 + 12 * count
    if len(data) < need:
        raise TruncatedPayloadError("truncated frame payload")
    pts = np.frombuffer(data, dtype="<f4", count=3 * count, offset=12)
    return index, pts.reshape(count, 3).astype(np.float64)


def read_frame_sequence(directory, pattern="frame_*.amsf"):
    """Replay a frame directory in index order; frames are self-describing.

    Yields (index, positions) and rejects inconsistent particle counts
    across the sequence.
    """
    count = None
    for path in sorted(Path(directory).glob(pattern)):
        index, pts = read_frame(path)
        if count is None:
            count = pts.shape[0]
        elif pts.shape[0] != count:
            raise AssetError(
                f"{path}: particle count {pts.shape[0]} != {count} earlier in sequence")
        yield index, pts


# --- meshes -----------------------------------------------------------------

@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray     # (F, 3) int, 0-based

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise AssetError("face index out of range")

    def triangle_corners(self):
        v = self.vertices
        f = self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def face_normals(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        n = np.cross(b - a, c - a)
        return n

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (normalized)."""
        fn = self.face_normals()
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        norms = np.linalg.norm(vn, axis=1)
        ok = norms > 1e-300
        vn[ok] /= norms[ok][:, None]
        return vn

    def triangle_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)


def load_mesh(path) -> Mesh:
    verts = []
    faces = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v" and len(parts) >= 4:
            verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "f" and len(parts) >= 4:
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
            faces.append(idx)
    if not verts or not faces:
        raise AssetError(f"{path}: no triangles found")
    return Mesh(np.array(verts), np.array(faces))


def save_mesh(mesh: Mesh, path):
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Unit icosphere by repeated edge midpoint subdivision."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                verts.append(tuple(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return Mesh(v, np.array(faces))

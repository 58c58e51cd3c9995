"""Rigid transforms and keyframed transform tracks.

Quaternions are stored (w, x, y, z), unit length. Track interpolation is
linear in translation and spherical in rotation; rigid velocities come from
finite differencing the track.
"""

from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate vectors v (..., 3) by unit quaternion q."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(q[1:], dtype=np.float64)
    w = float(q[0])
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_slerp(a, b, t):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 0.9995:
        out = a + t * (b - a)
        return quat_normalize(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b


@dataclass(frozen=True)
class RigidTransform:
    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.zeros(3), IDENTITY_QUAT.copy())

    def apply(self, points):
        return quat_rotate(self.rotation, points) + self.translation

    def apply_inverse(self, points):
        return quat_rotate(quat_conjugate(self.rotation), np.asarray(points) - self.translation)

    def rotate(self, vectors):
        return quat_rotate(self.rotation, vectors)

    def rotate_inverse(self, vectors):
        return quat_rotate(quat_conjugate(self.rotation), vectors)


@dataclass
class TransformTrack:
    """Keyframed rigid motion: times strictly increasing, constant outside."""

    times: np.ndarray = field(default_factory=lambda: np.zeros(1))
    translations: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    rotations: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.reshape(1, 4).copy())

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("track keyframe times must be strictly increasing")
        self.rotations = np.stack([quat_normalize(q) for q in self.rotations])

    @staticmethod
    def static_track() -> "TransformTrack":
        return TransformTrack()

    def at(self, t: float) -> RigidTransform:
        times = self.times
        if t <= times[0]:
            return RigidTransform(self.translations[0].copy(), self.rotations[0].copy())
        if t >= times[-1]:
            return RigidTransform(self.translations[-1].copy(), self.rotations[-1].copy())
        k = int(np.searchsorted(times, t, side="right")) - 1
        u = (t - times[k]) / (times[k + 1] - times[k])
        trans = (1.0 - u) * self.translations[k] + u * self.translations[k + 1]
        rot = quat_slerp(self.rotations[k], self.rotations[k + 1], u)
        return RigidTransform(trans, rot)

    def velocity_at(self, t: float, dt: float = 1e-4):
        """Linear and angular velocity by central finite difference."""
        a = self.at(t - 0.5 * dt)
        b = self.at(t + 0.5 * dt)
        v_lin = (b.translation - a.translation) / dt
        dq = quat_multiply(b.rotation, quat_conjugate(a.rotation))
        dq = quat_normalize(dq)
        w = float(np.clip(dq[0], -1.0, 1.0))
        angle = 2.0 * np.arccos(w)
        s = np.sqrt(max(0.0, 1.0 - w * w))
        if s < 1e-12 or angle < 1e-12:
            omega = np.zeros(3)
        else:
            omega = (dq[1:] / s) * (angle / dt)
        return v_lin, omega

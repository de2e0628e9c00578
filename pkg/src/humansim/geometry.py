"""Rigid-body math: unit-quaternion rotations, SE(3) transforms, metrics.

Conventions
-----------
* Quaternions are stored ``(w, x, y, z)`` and canonicalised to ``w >= 0``.
* ``RigidTransform`` maps ``p -> R @ p + t``; ``compose(a, b)`` applies ``b`` first.
* Cameras use +Z forward, +X right, +Y down.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from ._validation import as_vec3
from .exceptions import GeometryError

__all__ = [
    "Rotation",
    "RigidTransform",
    "PoseError",
    "compose",
    "invert",
    "transform_point",
    "geodesic_angle",
    "chordal_mean_rotation",
    "look_at",
    "rot_x",
    "rot_y",
    "rot_z",
    "skew",
    "exp_so3",
]


def _canonical(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-300:
        raise GeometryError("quaternion must be finite and non-zero")
    q = q / n
    if q[0] < 0:
        q = -q
    elif q[0] == 0:
        # w == 0 leaves a sign ambiguity; pin the first non-zero vector component positive
        for c in q[1:]:
            if c != 0:
                if c < 0:
                    q = -q
                break
    return q


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""

    quat: np.ndarray

    def __post_init__(self):
        q = _canonical(self.quat)
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise GeometryError(f"rotation matrix must be 3x3, got {m.shape}")
        x, y, z, w = _ScipyRotation.from_matrix(m).as_quat()
        return cls(np.array([w, x, y, z]))

    @classmethod
    def from_rotvec(cls, v):
        v = as_vec3(v, "rotation vector")
        angle = np.linalg.norm(v)
        if angle < 1e-300:
            return cls.identity()
        axis = v / angle
        return cls(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))

    @classmethod
    def from_axis_angle(cls, axis, angle):
        axis = as_vec3(axis, "axis")
        n = np.linalg.norm(axis)
        if n == 0:
            raise GeometryError("rotation axis must be non-zero")
        return cls.from_rotvec(axis / n * angle)

    @property
    def matrix(self):
        w, x, y, z = self.quat
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_rotvec(self):
        w, v = self.quat[0], self.quat[1:]
        s = np.linalg.norm(v)
        if s < 1e-300:
            return np.zeros(3)
        angle = 2.0 * np.arctan2(s, w)
        return v / s * angle

    def inverse(self):
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def __mul__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        w1, x1, y1, z1 = self.quat
        w2, x2, y2, z2 = other.quat
        return Rotation(
            np.array(
                [
                    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
                ]
            )
        )

    def apply(self, p):
        return np.asarray(p, dtype=float) @ self.matrix.T

    def __repr__(self):
        return "Rotation(w={:.6g}, x={:.6g}, y={:.6g}, z={:.6g})".format(*self.quat)


def rot_x(angle):
    return Rotation.from_axis_angle([1.0, 0.0, 0.0], angle)


def rot_y(angle):
    return Rotation.from_axis_angle([0.0, 1.0, 0.0], angle)


def rot_z(angle):
    return Rotation.from_axis_angle([0.0, 0.0, 1.0], angle)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) pose: ``p -> rotation(p) + translation`` (meters)."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        if not isinstance(self.rotation, Rotation):
            raise GeometryError("rotation must be a Rotation")
        t = as_vec3(self.translation, "translation").copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_translation(cls, t):
        return cls(Rotation.identity(), t)

    @classmethod
    def from_matrix(cls, m):
        """Build from a 4x4 homogeneous matrix or a 3x4 ``[R | t]`` block."""
        m = np.asarray(m, dtype=float)
        return cls(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rt(cls, r, t):
        return cls(Rotation.from_matrix(r), t)

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return compose(self, other)
        return transform_point(self, other)

    def inverse(self):
        return invert(self)

    def allclose(self, other, atol=1e-9):
        return (
            np.allclose(self.translation, other.translation, rtol=0, atol=atol)
            and geodesic_angle(self.rotation, other.rotation) <= atol
        )

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation!r}, translation={self.translation.tolist()!r})"


@dataclass(frozen=True)
class PoseError:
    translation_error: float
    rotation_error: float


def compose(a, b):
    """Return the transform ``p -> a(b(p))``."""
    r = a.rotation * b.rotation
    t = a.rotation.matrix @ b.translation + a.translation
    return RigidTransform(r, t)


def invert(t):
    r_inv = t.rotation.inverse()
    return RigidTransform(r_inv, -(r_inv.matrix @ t.translation))


def transform_point(t, p):
    """Apply ``t`` to one point ``(3,)`` or a stack of points ``(n, 3)``."""
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.matrix.T + t.translation


def geodesic_angle(a, b):
    """Angle in ``[0, pi]`` of the relative rotation ``a^-1 b``."""
    # atan2 of the relative quaternion stays accurate near 0 and pi, unlike arccos
    rel = (a.inverse() * b).quat
    return float(2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0])))


def chordal_mean_rotation(rotations):
    """Rotation maximising the summed squared quaternion dot products.

    Principal eigenvector of ``sum_i q_i q_i^T``; insensitive to the sign of
    each input quaternion.
    """
    rotations = list(rotations)
    if not rotations:
        raise ValueError("chordal_mean_rotation needs at least one rotation")
    q = np.array([r.quat for r in rotations])
    m = q.T @ q
    _, vecs = np.linalg.eigh(m)
    return Rotation(vecs[:, -1])


def look_at(eye, target, up):
    """World-from-camera pose at ``eye`` with +Z toward ``target`` and +Y against ``up``."""
    eye = as_vec3(eye, "eye")
    target = as_vec3(target, "target")
    up = as_vec3(up, "up")
    forward = target - eye
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise GeometryError("look_at: eye and target coincide")
    z = forward / n
    down = -up
    y = down - np.dot(down, z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-9 * max(1.0, np.linalg.norm(up)):
        raise GeometryError("look_at: up vector is parallel to the viewing direction")
    y /= ny
    x = np.cross(y, z)
    r = np.column_stack([x, y, z])
    return RigidTransform(Rotation.from_matrix(r), eye)


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(w):
    """Rodrigues exponential of a rotation vector to a 3x3 matrix."""
    x, y, z = float(w[0]), float(w[1]), float(w[2])
    theta2 = x * x + y * y + z * z
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    if theta2 < 1e-16:
        a, b = 1.0, 0.5
    else:
        theta = math.sqrt(theta2)
        a, b = math.sin(theta) / theta, (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)

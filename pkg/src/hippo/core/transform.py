"""Rigid-body transforms in SE(3)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ColoredPointCloud

_DRIFT_TOL = 1e-9
_REJECT_TOL = 1e-4


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def _drift(rotation: np.ndarray) -> float:
    return max(
        float(np.max(np.abs(rotation.T @ rotation - np.eye(3)))),
        abs(float(np.linalg.det(rotation)) - 1.0),
    )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite rigid transform")
        drift = _drift(r)
        if drift > _REJECT_TOL:
            raise ValueError(f"rotation is not orthonormal (drift {drift:.2e})")
        if drift > _DRIFT_TOL:
            r = orthonormalize(r)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return RigidTransform(m[:3, :3], m[:3, 3])

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(np.eye(3), t)

    @staticmethod
    def from_rotvec(rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(rotvec_to_matrix(rotvec), translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def rotation_angle_to(self, other: "RigidTransform") -> float:
        """Geodesic angle (radians) between the two rotations."""
        rel = self.rotation.T @ other.rotation
        return float(np.arccos(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)))

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), atol=atol, rtol=0.0))

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """The transform applying ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if _drift(r) > _DRIFT_TOL:
        r = orthonormalize(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def transform_cloud(cloud: ColoredPointCloud, t: RigidTransform) -> ColoredPointCloud:
    normals = None if cloud.normals is None else t.apply_vectors(cloud.normals)
    return ColoredPointCloud(t.apply(cloud.positions), cloud.colors, normals)


def rotvec_to_matrix(rotvec) -> np.ndarray:
    w = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta < 1e-15:
        k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        return np.eye(3) + k
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=np.float64) / np.linalg.norm(a)
    b = np.asarray(b, dtype=np.float64) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate pi about any axis orthogonal to a
        helper = np.eye(3)[np.argmin(np.abs(a))]
        perp = np.cross(a, helper)
        return rotvec_to_matrix(np.pi * perp / np.linalg.norm(perp))
    return rotvec_to_matrix(axis / s * np.arctan2(s, c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )

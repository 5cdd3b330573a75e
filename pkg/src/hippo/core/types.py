"""Value types shared by every module: clouds, meshes, intrinsics, frames."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _as_points(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ColoredPointCloud:
    """Positions in meters, RGB colors in [0, 1], optional unit normals."""

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        if self.colors is None:
            col = np.full_like(pos, 0.5)
        else:
            col = _as_points(self.colors, "colors")
        if len(col) != len(pos):
            raise ValueError("positions and colors differ in length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite position in point cloud")
        nrm = None
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if len(nrm) != len(pos):
                raise ValueError("positions and normals differ in length")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", np.clip(col, 0.0, 1.0))
        object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, index) -> "ColoredPointCloud":
        index = np.asarray(index)
        return ColoredPointCloud(
            self.positions[index],
            self.colors[index],
            None if self.normals is None else self.normals[index],
        )

    def with_normals(self, normals) -> "ColoredPointCloud":
        return ColoredPointCloud(self.positions, self.colors, normals)

    @staticmethod
    def empty() -> "ColoredPointCloud":
        return ColoredPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))

    @staticmethod
    def concatenate(clouds) -> "ColoredPointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return ColoredPointCloud.empty()
        normals = None
        if all(c.has_normals for c in clouds):
            normals = np.concatenate([c.normals for c in clouds])
        return ColoredPointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            normals,
        )


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh with per-vertex colors in [0, 1]."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _as_points(self.vertices, "vertices")
        f = np.asarray(self.faces, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {f.shape}")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if len(f) and np.any(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ):
            raise ValueError("degenerate face with repeated vertex index")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite mesh vertex")
        if self.vertex_colors is None:
            c = np.full_like(v, 0.7)
        else:
            c = _as_points(self.vertex_colors, "vertex_colors")
            if len(c) != len(v):
                raise ValueError("vertex_colors length differs from vertex count")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_colors", np.clip(c, 0.0, 1.0))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) corner coordinates per face."""
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def edge_face_counts(self) -> dict:
        """Undirected edge -> number of incident faces."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(uniq, counts)}

    def is_watertight(self) -> bool:
        if self.is_empty:
            return False
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def euler_characteristic(self) -> int:
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(e, axis=0))
        n_verts = len(np.unique(self.faces))
        return n_verts - n_edges + len(self.faces)

    def signed_volume(self) -> float:
        tri = self.triangles()
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    def transformed(self, transform) -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.faces, self.vertex_colors)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @staticmethod
    def default(width: int = 512, height: int = 512, focal: float = 500.0) -> "CameraIntrinsics":
        return CameraIntrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


@dataclass(frozen=True, eq=False)
class Frame:
    """One RGB-D observation. Depth in meters with 0 marking invalid pixels."""

    depth: np.ndarray
    color: np.ndarray
    mask: np.ndarray
    intrinsics: CameraIntrinsics
    timestamp: int = 0
    gt_pose: Optional[object] = field(default=None)

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        color = np.asarray(self.color)
        if color.dtype == np.uint8:
            color = color.astype(np.float64) / 255.0
        color = np.asarray(color, dtype=np.float64)
        mask = np.asarray(self.mask).astype(bool)
        shape = (self.intrinsics.height, self.intrinsics.width)
        if depth.shape != shape or mask.shape != shape or color.shape != shape + (3,):
            raise ValueError(
                f"frame arrays do not match intrinsics {shape}: "
                f"depth {depth.shape}, color {color.shape}, mask {mask.shape}"
            )
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "mask", mask)

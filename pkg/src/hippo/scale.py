"""Oriented bounding boxes and metric scale recovery for generated meshes.

The generated mesh lives in arbitrary units.  Its first-view partial cloud
and the measured first-view cloud describe the same surface, so the ratio of
their OBB maximum side lengths is the unit conversion factor::

    s = g_max / r_max      metric = generated / s
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core.types import ColoredPointCloud, TriangleMesh
from .spatial.sor import SorParams, sor_filter

_DEGENERATE_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class OrientedBoundingBox:
    center: np.ndarray
    axes: np.ndarray  # columns are the box axes
    half_extents: np.ndarray

    @property
    def max_side(self) -> float:
        return float(2.0 * np.max(self.half_extents))

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.axes

    def contains(self, points, slack: float = 1e-9) -> np.ndarray:
        return np.all(np.abs(self.local(points)) <= self.half_extents + slack, axis=1)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.center + (signs * self.half_extents) @ self.axes.T


def _min_area_angle(pts2: np.ndarray) -> float:
    """Rotation angle of the minimum-area enclosing rectangle of 2D points."""
    try:
        hull = pts2[ConvexHull(pts2).vertices]
    except (QhullError, ValueError):
        return 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.arctan2(edges[:, 1], edges[:, 0]) % (np.pi / 2)
    best_area, best = np.inf, 0.0
    for a in angles:
        c, s = np.cos(a), np.sin(a)
        rot = hull @ np.array([[c, -s], [s, c]])
        area = np.ptp(rot[:, 0]) * np.ptp(rot[:, 1])
        if area < best_area * (1 - 1e-12):
            best_area, best = area, a
    return best


def _refine_plane(centered: np.ndarray, e1: np.ndarray, e2: np.ndarray):
    """Pick the in-plane axes giving the tightest rectangle (ambiguous PCA plane)."""
    pts2 = np.stack([centered @ e1, centered @ e2], axis=1)
    a = _min_area_angle(pts2)
    c, s = np.cos(a), np.sin(a)
    return c * e1 + s * e2, -s * e1 + c * e2


def _refine_isotropic(centered: np.ndarray) -> Optional[np.ndarray]:
    # PCA gives no preferred axes: try hull-face normals, keep the smallest box
    try:
        hull = ConvexHull(centered)
    except (QhullError, ValueError):
        return None
    normals = np.unique(np.round(hull.equations[:, :3], 12), axis=0)
    best_vol, best = np.inf, None
    for n in normals:
        n = n / np.linalg.norm(n)
        helper = np.eye(3)[np.argmin(np.abs(n))]
        e1 = np.cross(n, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        a1, a2 = _refine_plane(centered, e1, e2)
        axes = np.stack([n, a1, a2], axis=1)
        vol = np.prod(np.ptp(centered @ axes, axis=0))
        if vol < best_vol * (1 - 1e-12):
            best_vol, best = vol, axes
    return best


def _gram_schmidt_complete(axes: list) -> list:
    for e in np.eye(3):
        if len(axes) == 3:
            break
        v = e - sum(np.dot(e, a) * a for a in axes)
        if np.linalg.norm(v) > 1e-6:
            axes.append(v / np.linalg.norm(v))
    return axes


def _fix_sign(a: np.ndarray) -> np.ndarray:
    mag = np.abs(a)
    i = int(np.argmax(mag >= mag.max() - 1e-12))
    return a if a[i] > 0 else -a


def compute_obb(cloud) -> OrientedBoundingBox:
    """PCA oriented bounding box.

    Axes follow descending covariance eigenvalues; each axis is signed so its
    largest-magnitude component is positive (earliest component wins ties),
    the third axis completes a right-handed frame.  Where PCA leaves axes
    undetermined (repeated eigenvalues), the tightest box over hull-edge /
    hull-face directions is used so the result stays rotation invariant.
    """
    pts = cloud.positions if isinstance(cloud, ColoredPointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot compute the OBB of an empty cloud")
    mean = pts.mean(axis=0)
    centered = pts - mean
    if not np.any(centered):
        return OrientedBoundingBox(mean.copy(), np.eye(3), np.zeros(3))
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    tol = _DEGENERATE_RTOL * evals[0]
    null = evals <= tol
    if null[1]:
        # collinear points: only the first axis is meaningful
        axes = _gram_schmidt_complete([evecs[:, 0]])
    elif abs(evals[0] - evals[2]) <= tol:
        refined = _refine_isotropic(centered)
        axes = list(evecs.T) if refined is None else list(refined.T)
    elif abs(evals[0] - evals[1]) <= tol:
        a1, a2 = _refine_plane(centered, evecs[:, 0], evecs[:, 1])
        axes = [a1, a2, evecs[:, 2]]
    elif abs(evals[1] - evals[2]) <= tol and not null[2]:
        a1, a2 = _refine_plane(centered, evecs[:, 1], evecs[:, 2])
        axes = [evecs[:, 0], a1, a2]
    else:
        axes = list(evecs.T)
    axes = np.stack(axes, axis=1)
    # within tied eigenvalues order by extent, largest first
    extents = np.ptp(centered @ axes, axis=0)
    lam = np.array([evals[0], evals[1], evals[2]])
    order = sorted(range(3), key=lambda i: (-round(lam[i] / evals[0], 6), -extents[i], i))
    axes = axes[:, order]
    a1, a2 = _fix_sign(axes[:, 0]), _fix_sign(axes[:, 1])
    a2 = a2 - np.dot(a2, a1) * a1
    a2 /= np.linalg.norm(a2)
    a3 = np.cross(a1, a2)
    axes = np.stack([a1, a2, a3], axis=1)
    proj = centered @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = mean + axes @ ((lo + hi) / 2.0)
    return OrientedBoundingBox(center, axes, (hi - lo) / 2.0)


def uniform_scale(cloud: ColoredPointCloud, s: float) -> ColoredPointCloud:
    return ColoredPointCloud(cloud.positions * s, cloud.colors, cloud.normals)


def recover_scale(
    measured_partial: ColoredPointCloud,
    estimated_partial: ColoredPointCloud,
    sor: Optional[SorParams] = SorParams(),
) -> float:
    """Generated-units-per-meter factor from two partial clouds of the same view.

    ``sor=None`` skips denoising.
    """
    clouds = []
    for name, c in (("measured", measured_partial), ("estimated", estimated_partial)):
        if sor is not None:
            if len(c) <= sor.n_neighbors:
                raise ValueError(f"{name} partial cloud too small for SOR ({len(c)} points)")
            c, _ = sor_filter(c, sor)
        if len(c) == 0:
            raise ValueError(f"{name} partial cloud is empty")
        clouds.append(c)
    r_max = compute_obb(clouds[0]).max_side
    g_max = compute_obb(clouds[1]).max_side
    if r_max <= 0:
        raise ValueError("measured partial cloud has zero extent")
    return g_max / r_max


def apply_scale(mesh: TriangleMesh, s: float) -> TriangleMesh:
    """Convert generated-unit vertices to meters (divide by ``s``)."""
    if not s > 0:
        raise ValueError(f"scale must be positive, got {s}")
    return TriangleMesh(mesh.vertices / s, mesh.faces, mesh.vertex_colors)

"""Normal estimation and regular-grid Poisson surface reconstruction.

The indicator field chi is solved on a cubic-cell grid covering the padded
bounding box of the samples::

    lap(chi) = div(V)      chi = 0 on the grid boundary

where V is the trilinear splat of the oriented normals.  With outward
normals chi grows outward, so the interior is the region chi < iso.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from skimage import measure

from .core.types import ColoredPointCloud, TriangleMesh
from .spatial.kdtree import KdTree


class ReconError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReconParams:
    grid_resolution: int = 64
    normal_k: int = 16
    cg_tolerance: float = 1e-6
    cg_max_iters: int = 2000
    trim_distance: float = 3.0
    padding: float = 0.1
    smoothing_passes: int = 1

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be at least 2")
        for name in ("normal_k", "cg_max_iters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("cg_tolerance", "trim_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.padding < 0 or self.smoothing_passes < 0:
            raise ValueError("padding and smoothing_passes must be non-negative")


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """Node-sampled scalar field; ``values`` is flat in x-major (C) order."""

    resolution: tuple
    origin: np.ndarray
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or min(res) < 2:
            raise ValueError(f"resolution must be three counts >= 2, got {self.resolution}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        if len(vals) != np.prod(res):
            raise ValueError(f"values length {len(vals)} does not match resolution {res}")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "values", vals)

    @staticmethod
    def from_array(array, origin, cell_size) -> "ScalarGrid":
        array = np.asarray(array, dtype=np.float64)
        return ScalarGrid(array.shape, origin, cell_size, array.ravel())

    def array(self) -> np.ndarray:
        return self.values.reshape(self.resolution)

    def sample(self, points) -> np.ndarray:
        """Trilinear interpolation; points outside the grid are clamped to it."""
        base, frac = _cell_coords(np.asarray(points, dtype=np.float64), self.origin, self.cell_size, self.resolution)
        arr = self.array()
        out = np.zeros(len(base))
        for corner, w in _corners(frac):
            i = base + corner
            out += w * arr[i[:, 0], i[:, 1], i[:, 2]]
        return out


def _cell_coords(points, origin, h, res):
    g = (points - origin) / h
    hi = np.asarray(res) - 2
    base = np.clip(np.floor(g).astype(np.int64), 0, hi)
    frac = np.clip(g - base, 0.0, 1.0)
    return base, frac


def _corners(frac):
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                yield np.array([dx, dy, dz]), wx * wy * wz


def estimate_normals(cloud: ColoredPointCloud, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> ColoredPointCloud:
    """Local PCA normals from k nearest neighbours, flipped to face ``viewpoint``."""
    n = len(cloud)
    if n <= k:
        raise ValueError(f"need more than k={k} points for normal estimation, got {n}")
    pts = cloud.positions
    idx, _ = KdTree(pts).knn(pts, k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=np.float64) - pts
    flip = np.einsum("ij,ij->i", normals, to_view) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)


def dirichlet_laplacian(shape) -> sp.csr_matrix:
    """Negative 7-point Laplacian (times h^2) over interior nodes of a grid.

    Boundary nodes are fixed at zero, so the operator is symmetric positive
    definite on the ``(nx-2)*(ny-2)*(nz-2)`` interior unknowns (x-major order).
    """
    dims = [int(s) - 2 for s in shape]
    if min(dims) < 1:
        raise ValueError(f"grid {tuple(shape)} has no interior nodes")

    def second_diff(m):
        return sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])

    eye = [sp.identity(m) for m in dims]
    a = sp.kron(sp.kron(second_diff(dims[0]), eye[1]), eye[2])
    a = a + sp.kron(sp.kron(eye[0], second_diff(dims[1])), eye[2])
    a = a + sp.kron(sp.kron(eye[0], eye[1]), second_diff(dims[2]))
    return a.tocsr()


@dataclass(frozen=True)
class CgResult:
    x: np.ndarray
    iterations: int
    relative_residual: float


def conjugate_gradient(a, b, tol: float = 1e-6, max_iters: int = 2000, x0=None) -> CgResult:
    """Plain CG for symmetric positive definite ``a``.

    Convergence is judged on the true residual ``|b - a x| / |b|``.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return CgResult(np.zeros_like(b), 0, 0.0)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - a @ x
    p = r.copy()
    rr = r @ r
    it = 0
    while it < max_iters:
        if np.sqrt(rr) <= tol * bnorm:
            # the recursive residual drifts, confirm with the true one
            r = b - a @ x
            rr = r @ r
            if np.sqrt(rr) <= tol * bnorm:
                return CgResult(x, it, float(np.sqrt(rr) / bnorm))
            p = r.copy()
        ap = a @ p
        alpha = rr / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    res = np.linalg.norm(b - a @ x) / bnorm
    if res <= tol:
        return CgResult(x, it, float(res))
    raise ReconError(f"conjugate gradient stalled at relative residual {res:.3e} after {max_iters} iterations")


@dataclass(frozen=True, eq=False)
class IndicatorSolution:
    grid: ScalarGrid
    iso: float
    cg: CgResult


def _grid_frame(points: np.ndarray, params: ReconParams):
    lo, hi = points.min(axis=0), points.max(axis=0)
    ext = hi - lo
    span = float(ext.max())
    if span <= 0:
        raise ReconError("samples have zero extent")
    h = span * (1.0 + 2.0 * params.padding) / (params.grid_resolution - 1)
    # cubic cells; thin axes still get padding on both sides
    counts = np.maximum(np.ceil(ext / h + 2.0 * params.padding * span / h).astype(int) + 1, 4)
    counts = np.minimum(counts, params.grid_resolution + 2)
    center = (lo + hi) / 2.0
    origin = center - h * (counts - 1) / 2.0
    return origin, h, tuple(int(c) for c in counts)


def solve_indicator(cloud: ColoredPointCloud, params: ReconParams = ReconParams()) -> IndicatorSolution:
    """Splat normals, solve the Poisson system and pick the iso-level."""
    if len(cloud) == 0:
        raise ReconError("cannot reconstruct an empty cloud")
    if not cloud.has_normals:
        raise ReconError("poisson reconstruction needs oriented normals")
    pts = cloud.positions
    origin, h, shape = _grid_frame(pts, params)
    base, frac = _cell_coords(pts, origin, h, shape)
    field = np.zeros((3,) + shape)
    flat_size = int(np.prod(shape))
    for corner, w in _corners(frac):
        i = base + corner
        lin = np.ravel_multi_index((i[:, 0], i[:, 1], i[:, 2]), shape)
        for d in range(3):
            field[d] += np.bincount(lin, weights=w * cloud.normals[:, d], minlength=flat_size).reshape(shape)
    # splat density normalised to a unit-area surface element per sample
    field *= 1.0 / h**2
    for _ in range(params.smoothing_passes):
        for d in range(3):
            for ax in range(3):
                field[d] = ndimage.convolve1d(field[d], [0.25, 0.5, 0.25], axis=ax, mode="constant")
    div = np.zeros(shape)
    for d in range(3):
        div += np.gradient(field[d], h, axis=d)
    a = dirichlet_laplacian(shape)
    rhs = -(h**2) * div[1:-1, 1:-1, 1:-1].ravel()
    cg = conjugate_gradient(a, rhs, params.cg_tolerance, params.cg_max_iters)
    chi = np.zeros(shape)
    chi[1:-1, 1:-1, 1:-1] = cg.x.reshape([s - 2 for s in shape])
    grid = ScalarGrid.from_array(chi, origin, h)
    iso = float(grid.sample(pts).mean())
    return IndicatorSolution(grid, iso, cg)


def marching_cubes(grid: ScalarGrid, iso: float) -> TriangleMesh:
    """Iso-surface of ``grid`` with faces wound so normals point toward higher values."""
    arr = grid.array()
    if not (arr.min() < iso < arr.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    verts, faces, _, _ = measure.marching_cubes(
        arr, level=iso, spacing=(grid.cell_size,) * 3, gradient_direction="descent", method="lorensen"
    )
    faces = faces.astype(np.int64)
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return _compact(verts.astype(np.float64) + grid.origin, faces[keep])


def _compact(vertices, faces, colors=None) -> TriangleMesh:
    used = np.unique(faces)
    remap = np.full(len(vertices), -1, np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(vertices[used], remap[faces], None if colors is None else colors[used])


def poisson_reconstruct(cloud: ColoredPointCloud, params: ReconParams = ReconParams()) -> TriangleMesh:
    """Watertight-where-supported mesh of an oriented cloud, colored from the nearest sample."""
    sol = solve_indicator(cloud, params)
    mesh = marching_cubes(sol.grid, sol.iso)
    if mesh.is_empty:
        return mesh
    tree = KdTree(cloud.positions)
    centroids = mesh.triangles().mean(axis=1)
    _, dist = tree.query(centroids)
    keep = dist <= params.trim_distance * sol.grid.cell_size
    if not keep.any():
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    mesh = _compact(mesh.vertices, mesh.faces[keep])
    idx, _ = tree.query(mesh.vertices)
    return TriangleMesh(mesh.vertices, mesh.faces, cloud.colors[idx])

"""Area-weighted surface sampling of triangle meshes."""

from __future__ import annotations

import numpy as np

from .types import ColoredPointCloud, TriangleMesh


def sample_surface(mesh: TriangleMesh, count: int, rng=None) -> ColoredPointCloud:
    """Uniform samples over the mesh surface with interpolated colors and face normals."""
    if mesh.is_empty or len(mesh.faces) == 0:
        raise ValueError("cannot sample an empty mesh")
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(rng)
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    face = rng.choice(len(areas), size=count, p=areas / total)
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    w = np.stack([1.0 - u - v, u, v], axis=1)
    tri = mesh.faces[face]
    pos = np.einsum("nk,nkd->nd", w, mesh.vertices[tri])
    col = np.clip(np.einsum("nk,nkd->nd", w, mesh.vertex_colors[tri]), 0.0, 1.0)
    normals = mesh.face_normals()[face]
    good = np.linalg.norm(normals, axis=1) > 0.5
    if not good.all():
        # zero-area faces cannot be drawn (probability 0) so this is just a guard
        normals[~good] = [0.0, 0.0, 1.0]
    return ColoredPointCloud(pos, col, normals)

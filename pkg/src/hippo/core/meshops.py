"""Small mesh utilities shared by the simulator and the prior generator."""

from __future__ import annotations

import numpy as np

from .types import TriangleMesh


def weld_vertices(mesh: TriangleMesh, tol: float = 1e-9):
    """Merge vertices closer than ``tol`` (grid-quantized).

    Returns ``(welded_mesh, mapping)`` where ``mapping[i]`` is the welded index
    of original vertex ``i``.  The first occurrence keeps its color.
    """
    key = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, mapping = np.unique(key, axis=0, return_index=True, return_inverse=True)
    mapping = mapping.ravel()
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    mapping = rank[mapping]
    keep = first[order]
    faces = mapping[mesh.faces]
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return TriangleMesh(mesh.vertices[keep], faces[ok], mesh.vertex_colors[keep]), mapping


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted vertex normals; isolated vertices get (0, 0, 1)."""
    tri = mesh.triangles()
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.tile([0.0, 0.0, 1.0], (len(acc), 1))
    good = norm[:, 0] > 0
    out[good] = acc[good] / norm[good]
    return out


def subdivide_midpoint(mesh: TriangleMesh) -> TriangleMesh:
    """Split every triangle into four; shared edges share their midpoint."""
    f = mesh.faces
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    n, m = len(mesh.vertices), len(f)
    mid = n + inv
    m01, m12, m20 = mid[:m], mid[m : 2 * m], mid[2 * m :]
    verts = np.vstack([mesh.vertices, mesh.vertices[uniq].mean(axis=1)])
    colors = np.vstack([mesh.vertex_colors, mesh.vertex_colors[uniq].mean(axis=1)])
    faces = np.concatenate(
        [
            np.stack([f[:, 0], m01, m20], axis=1),
            np.stack([m01, f[:, 1], m12], axis=1),
            np.stack([m20, m12, f[:, 2]], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return TriangleMesh(verts, faces, colors)


def merge_meshes(meshes) -> TriangleMesh:
    verts, faces, colors, offset = [], [], [], 0
    for mesh in meshes:
        verts.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        colors.append(mesh.vertex_colors)
        offset += len(mesh.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(faces), np.vstack(colors))

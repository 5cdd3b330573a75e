"""Primitive stand-in objects (z-up, bounding box centered on the origin)."""

from __future__ import annotations

import numpy as np

from ..core.meshops import merge_meshes
from ..core.types import TriangleMesh

DEFAULT_DIMS = {
    "box": (0.2, 0.12, 0.08),
    "cylinder": (0.05, 0.2),
    "mug": (0.065, 0.16),
}

_BASE = np.array([0.85, 0.35, 0.2])
_ALT = np.array([0.2, 0.45, 0.85])


def _check_dims(dims, count, kind):
    d = np.asarray(dims, dtype=np.float64).ravel()
    if d.shape != (count,):
        raise ValueError(f"{kind} expects {count} dimensions, got {list(d)}")
    if not np.all(d > 0):
        raise ValueError(f"{kind} dimensions must be positive, got {list(d)}")
    return d


def box_mesh(dims) -> TriangleMesh:
    """Axis-aligned box with 24 split vertices (4 per face) and 12 faces."""
    h = _check_dims(dims, 3, "box") / 2.0
    verts, faces = [], []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for sign in (1.0, -1.0):
            base = len(verts)
            for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[axis], p[u], p[v] = sign * h[axis], a * h[u], b * h[v]
                verts.append(p)
            quad = [[base, base + 1, base + 2], [base, base + 2, base + 3]]
            # (u, v, axis) is right-handed, so this order faces +axis
            if sign < 0:
                quad = [[t[0], t[2], t[1]] for t in quad]
            faces.extend(quad)
    return TriangleMesh(np.array(verts), np.array(faces))


def cylinder_mesh(radius: float, height: float, segments: int = 48, rings: int = 8, cap_rings: int = 4) -> TriangleMesh:
    """Closed z-axis cylinder; caps are concentric rings sharing the rim vertices."""
    _check_dims([radius, height], 2, "cylinder")
    ang = 2 * np.pi * np.arange(segments) / segments
    circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # loops of vertices: bottom cap inward-to-rim, side rings, top cap rim-to-inward
    loops = []
    cap_r = radius * np.arange(1, cap_rings) / cap_rings
    for r in cap_r:
        loops.append(np.c_[r * circle, np.full(segments, -height / 2)])
    for z in np.linspace(-height / 2, height / 2, rings + 1):
        loops.append(np.c_[radius * circle, np.full(segments, z)])
    for r in cap_r[::-1]:
        loops.append(np.c_[r * circle, np.full(segments, height / 2)])
    verts = np.vstack(loops + [[[0.0, 0.0, -height / 2], [0.0, 0.0, height / 2]]])
    bottom_c, top_c = len(verts) - 2, len(verts) - 1
    faces = []
    for r in range(len(loops) - 1):
        for s in range(segments):
            a, b = r * segments + s, r * segments + (s + 1) % segments
            c, d = a + segments, b + segments
            faces += [[a, b, d], [a, d, c]]
    last = (len(loops) - 1) * segments
    for s in range(segments):
        faces.append([bottom_c, (s + 1) % segments, s])
        faces.append([top_c, last + s, last + (s + 1) % segments])
    return TriangleMesh(verts, np.array(faces))


def torus_segment_mesh(offset: float, major: float, minor: float, sweep: float, n_phi: int = 24, n_theta: int = 16):
    """Tube along an arc in the x-z plane centered at (offset, 0, 0), ends capped."""
    phis = np.linspace(-sweep, sweep, n_phi + 1)
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    verts = []
    for phi in phis:
        er = np.array([np.cos(phi), 0.0, np.sin(phi)])
        c = np.array([offset, 0.0, 0.0]) + major * er
        for th in thetas:
            verts.append(c + minor * (np.cos(th) * er + np.sin(th) * np.array([0.0, 1.0, 0.0])))
    ends = []
    for phi in (phis[0], phis[-1]):
        ends.append([offset + major * np.cos(phi), 0.0, major * np.sin(phi)])
    verts = np.vstack([verts, ends])
    start_c, end_c = len(verts) - 2, len(verts) - 1
    faces = []
    for i in range(n_phi):
        for j in range(n_theta):
            a, b = i * n_theta + j, i * n_theta + (j + 1) % n_theta
            c, d = a + n_theta, b + n_theta
            faces += [[a, c, d], [a, d, b]]
    last = n_phi * n_theta
    for j in range(n_theta):
        faces.append([start_c, j, (j + 1) % n_theta])
        faces.append([end_c, last + (j + 1) % n_theta, last + j])
    mesh = TriangleMesh(verts, np.array(faces))
    if mesh.signed_volume() < 0:
        mesh = TriangleMesh(verts, np.array(faces)[:, ::-1])
    return mesh


def mug_mesh(radius: float, height: float) -> TriangleMesh:
    """Lidded cylinder body plus a torus-segment handle whose capped ends sit just inside the wall."""
    _check_dims([radius, height], 2, "mug")
    body = cylinder_mesh(radius, height, segments=64, rings=12)
    major, minor = 0.35 * height, 0.07 * height
    # the flat end caps must clear the curved wall; any deeper only adds hidden surface
    sink = 1.5 * (radius - np.sqrt(max(radius**2 - minor**2, 0.0)))
    handle = torus_segment_mesh(radius, major, minor, np.pi / 2 + np.arcsin(min(sink / major, 1.0)))
    return merge_meshes([body, handle])


def apply_color_scheme(mesh: TriangleMesh, scheme: str = "gradient", checker_size: float = 0.04) -> TriangleMesh:
    v = mesh.vertices
    if scheme == "solid":
        colors = np.tile(_BASE, (len(v), 1))
    elif scheme == "gradient":
        z = v[:, 2]
        span = np.ptp(z)
        w = (z - z.min()) / span if span > 0 else np.zeros(len(v))
        colors = (1 - w)[:, None] * _BASE + w[:, None] * _ALT
    elif scheme == "checker":
        parity = np.floor(v / checker_size + 1e-9).astype(np.int64).sum(axis=1) % 2
        colors = np.where(parity[:, None] == 0, _BASE, _ALT)
    else:
        raise ValueError(f"unknown color scheme {scheme!r}")
    return TriangleMesh(v, mesh.faces, colors)


def make_primitive(kind: str, dims=None, color_scheme: str = "gradient") -> TriangleMesh:
    """Box dims are (x, y, z) sides; cylinder and mug dims are (radius, height)."""
    if kind not in DEFAULT_DIMS:
        raise ValueError(f"unknown primitive {kind!r}; expected one of {sorted(DEFAULT_DIMS)}")
    dims = DEFAULT_DIMS[kind] if dims is None else dims
    if kind == "box":
        mesh = box_mesh(dims)
    else:
        r, h = _check_dims(dims, 2, kind)
        mesh = cylinder_mesh(r, h) if kind == "cylinder" else mug_mesh(r, h)
    center = (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0)) / 2.0
    mesh = TriangleMesh(mesh.vertices - center, mesh.faces)
    return apply_color_scheme(mesh, color_scheme)

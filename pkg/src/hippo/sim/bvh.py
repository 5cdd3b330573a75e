"""Bounding-volume hierarchy over triangles with Moller-Trumbore ray casting.

Hits are the smallest ``t > T_MIN`` along ``origin + t * direction``; equal
``t`` resolves to the lowest triangle index, so results match a brute-force
scan exactly.  Triangles are two-sided.
"""

from __future__ import annotations

import numba
import numpy as np

from ..core.types import TriangleMesh

T_MIN = 1e-9
_DET_EPS = 1e-18
_STACK = 128


@numba.njit(cache=True)
def _build(centroids, tmin, tmax, leaf_size):
    n = centroids.shape[0]
    max_nodes = 2 * n + 1
    perm = np.arange(n)
    lo = np.empty(max_nodes, np.int64)
    hi = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    lo[0], hi[0] = 0, n
    count = 1
    stack = np.empty(max_nodes, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        a, b = lo[node], hi[node]
        for d in range(3):
            mn, mx = np.inf, -np.inf
            for i in range(a, b):
                t = perm[i]
                if tmin[t, d] < mn:
                    mn = tmin[t, d]
                if tmax[t, d] > mx:
                    mx = tmax[t, d]
            bmin[node, d], bmax[node, d] = mn, mx
        if b - a <= leaf_size:
            continue
        # split on the axis of largest centroid spread, at the median
        best_axis, best_ext = 0, -1.0
        for d in range(3):
            mn, mx = np.inf, -np.inf
            for i in range(a, b):
                c = centroids[perm[i], d]
                if c < mn:
                    mn = c
                if c > mx:
                    mx = c
            if mx - mn > best_ext:
                best_ext, best_axis = mx - mn, d
        if best_ext <= 0.0:
            continue
        seg = perm[a:b].copy()
        order = np.argsort(centroids[seg, best_axis], kind="mergesort")
        perm[a:b] = seg[order]
        m = (a + b) // 2
        l, r = count, count + 1
        count += 2
        lo[l], hi[l], lo[r], hi[r] = a, m, m, b
        left[node], right[node] = l, r
        stack[sp] = l
        stack[sp + 1] = r
        sp += 2
    return perm, lo[:count], hi[:count], left[:count], right[:count], bmin[:count], bmax[:count]


@numba.njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, v1, v2):
    e1x, e1y, e1z = v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]
    e2x, e2y, e2z = v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < _DET_EPS:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx, sy, sz = ox - v0[0], oy - v0[1], oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@numba.njit(cache=True, inline="always")
def _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, node):
    t0, t1 = 0.0, np.inf
    for d in range(3):
        o = ox if d == 0 else (oy if d == 1 else oz)
        inv = ix if d == 0 else (iy if d == 1 else iz)
        a = (bmin[node, d] - o) * inv
        b = (bmax[node, d] - o) * inv
        if a != a:  # 0 * inf when the ray lies in the slab plane
            a = -np.inf
        if b != b:
            b = np.inf
        if a > b:
            a, b = b, a
        if a > t0:
            t0 = a
        if b < t1:
            t1 = b
    return t0 if t0 <= t1 else np.inf


@numba.njit(cache=True)
def _intersect(origins, dirs, v0s, v1s, v2s, perm, lo, hi, left, right, bmin, bmax):
    m = origins.shape[0]
    tri_out = np.full(m, -1, np.int64)
    t_out = np.full(m, np.inf)
    u_out = np.zeros(m)
    v_out = np.zeros(m)
    stack = np.empty(_STACK, np.int64)
    for r in range(m):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        best_t, best_i, best_u, best_v = np.inf, -1, 0.0, 0.0
        sp = 0
        if _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, 0) < np.inf:
            stack[0] = 0
            sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            te = _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, node)
            if te == np.inf or te > best_t:
                continue
            if left[node] < 0:
                for k in range(lo[node], hi[node]):
                    tri = perm[k]
                    t, u, v = _tri_hit(ox, oy, oz, dx, dy, dz, v0s[tri], v1s[tri], v2s[tri])
                    if t > T_MIN and (t < best_t or (t == best_t and tri < best_i)):
                        best_t, best_i, best_u, best_v = t, tri, u, v
                continue
            # a missed box reports inf, which must not pass the <= best_t test
            ta = _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, left[node])
            tb = _box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, right[node])
            ok_a = ta < np.inf and ta <= best_t
            ok_b = tb < np.inf and tb <= best_t
            # push the farther child first so the nearer one is popped next
            if ta <= tb:
                if ok_b:
                    stack[sp] = right[node]
                    sp += 1
                if ok_a:
                    stack[sp] = left[node]
                    sp += 1
            else:
                if ok_a:
                    stack[sp] = left[node]
                    sp += 1
                if ok_b:
                    stack[sp] = right[node]
                    sp += 1
        if best_i >= 0:
            tri_out[r], t_out[r], u_out[r], v_out[r] = best_i, best_t, best_u, best_v
    return tri_out, t_out, u_out, v_out


@numba.njit(cache=True)
def _brute(origins, dirs, v0s, v1s, v2s):
    m = origins.shape[0]
    tri_out = np.full(m, -1, np.int64)
    t_out = np.full(m, np.inf)
    for r in range(m):
        for tri in range(v0s.shape[0]):
            t, _, _ = _tri_hit(
                origins[r, 0], origins[r, 1], origins[r, 2], dirs[r, 0], dirs[r, 1], dirs[r, 2], v0s[tri], v1s[tri], v2s[tri]
            )
            if t > T_MIN and t < t_out[r]:
                t_out[r], tri_out[r] = t, tri
    return tri_out, t_out


class Bvh:
    """Binary median-split hierarchy over the triangles of ``mesh``."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = 4):
        if mesh.is_empty:
            raise ValueError("cannot build a BVH over an empty mesh")
        self.mesh = mesh
        tri = mesh.triangles()
        self._v = [np.ascontiguousarray(tri[:, k]) for k in range(3)]
        self.perm, self.lo, self.hi, self.left, self.right, self.bmin, self.bmax = _build(
            np.ascontiguousarray(tri.mean(axis=1)), tri.min(axis=1), tri.max(axis=1), leaf_size
        )

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def leaves(self) -> list:
        return [self.perm[self.lo[i] : self.hi[i]] for i in range(self.n_nodes) if self.left[i] < 0]

    def intersect(self, origins, directions):
        """Nearest hits: ``(triangle, t, u, v)``; misses have triangle -1 and t inf."""
        o = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), np.shape(directions)))
        d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        o = o.reshape(-1, 3)
        return _intersect(o, d, *self._v, self.perm, self.lo, self.hi, self.left, self.right, self.bmin, self.bmax)


def brute_force_intersect(mesh: TriangleMesh, origins, directions):
    """All-triangle scan with the same hit rule; for testing the BVH."""
    tri = mesh.triangles()
    d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
    o = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=np.float64), d.shape))
    return _brute(o, d, *[np.ascontiguousarray(tri[:, k]) for k in range(3)])

"""Exact KD-tree over a fixed 3D point set.

Nodes own a contiguous slice of a permutation of the input indices, split on
the dimension of largest extent at the median.  Queries prune on node
bounding boxes and are exact; ties resolve to the lowest input index.
"""

from __future__ import annotations

import numba
import numpy as np

LEAF_SIZE = 16


@numba.njit(cache=True)
def _select(perm, pts, lo, hi, kth, dim):
    # in-place quickselect on perm[lo:hi] so perm[kth] holds the kth smallest
    # coordinate; ties ordered by index for determinism
    left, right = lo, hi - 1
    while right > left:
        mid = (left + right) // 2
        a, b, c = perm[left], perm[mid], perm[right]
        va, vb, vc = pts[a, dim], pts[b, dim], pts[c, dim]
        if (va <= vb) == (vb <= vc):
            pivot_i = mid
        elif (vb <= va) == (va <= vc):
            pivot_i = left
        else:
            pivot_i = right
        pv = pts[perm[pivot_i], dim]
        pidx = perm[pivot_i]
        perm[pivot_i], perm[right] = perm[right], perm[pivot_i]
        store = left
        for i in range(left, right):
            q = perm[i]
            if pts[q, dim] < pv or (pts[q, dim] == pv and q < pidx):
                perm[store], perm[i] = perm[i], perm[store]
                store += 1
        perm[store], perm[right] = perm[right], perm[store]
        if store == kth:
            return
        elif store < kth:
            left = store + 1
        else:
            right = store - 1


@numba.njit(cache=True)
def _build(pts, leaf_size):
    n = pts.shape[0]
    max_nodes = 2 * (n // max(leaf_size // 2, 1)) + 3
    perm = np.arange(n)
    lo = np.empty(max_nodes, np.int64)
    hi = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))
    depth = np.zeros(max_nodes, np.int64)
    lo[0], hi[0] = 0, n
    count = 1
    stack = np.empty(max_nodes, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        a, b = lo[node], hi[node]
        for d in range(3):
            mn, mx = np.inf, -np.inf
            for i in range(a, b):
                v = pts[perm[i], d]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            bmin[node, d], bmax[node, d] = mn, mx
        if b - a <= leaf_size:
            continue
        dim = 0
        ext = bmax[node, 0] - bmin[node, 0]
        for d in range(1, 3):
            if bmax[node, d] - bmin[node, d] > ext:
                ext = bmax[node, d] - bmin[node, d]
                dim = d
        if ext <= 0.0:
            continue  # all coincident: keep as a (large) leaf
        mid = (a + b) // 2
        _select(perm, pts, a, b, mid, dim)
        l_node, r_node = count, count + 1
        count += 2
        lo[l_node], hi[l_node] = a, mid
        lo[r_node], hi[r_node] = mid, b
        depth[l_node] = depth[node] + 1
        depth[r_node] = depth[node] + 1
        left[node], right[node] = l_node, r_node
        stack[sp] = l_node
        stack[sp + 1] = r_node
        sp += 2
    return perm, lo[:count], hi[:count], left[:count], right[:count], bmin[:count], bmax[:count], depth[:count]


@numba.njit(cache=True, inline="always")
def _box_d2(q, bmin, bmax, node):
    s = 0.0
    for d in range(3):
        if q[d] < bmin[node, d]:
            t = bmin[node, d] - q[d]
            s += t * t
        elif q[d] > bmax[node, d]:
            t = q[d] - bmax[node, d]
            s += t * t
    return s


@numba.njit(cache=True)
def _query_knn(pts, perm, lo, hi, left, right, bmin, bmax, queries, k):
    m = queries.shape[0]
    out_i = np.full((m, k), -1, np.int64)
    out_d = np.full((m, k), np.inf)
    stack = np.empty(256, np.int64)
    for qi in range(m):
        q = queries[qi]
        bd = out_d[qi]
        bi = out_i[qi]
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_d2(q, bmin, bmax, node) > bd[k - 1]:
                continue
            if left[node] < 0:
                for j in range(lo[node], hi[node]):
                    p = perm[j]
                    dx = pts[p, 0] - q[0]
                    dy = pts[p, 1] - q[1]
                    dz = pts[p, 2] - q[2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < bd[k - 1] or (d2 == bd[k - 1] and p < bi[k - 1]):
                        pos = k - 1
                        while pos > 0 and (d2 < bd[pos - 1] or (d2 == bd[pos - 1] and p < bi[pos - 1])):
                            bd[pos] = bd[pos - 1]
                            bi[pos] = bi[pos - 1]
                            pos -= 1
                        bd[pos] = d2
                        bi[pos] = p
                continue
            l_node, r_node = left[node], right[node]
            dl = _box_d2(q, bmin, bmax, l_node)
            dr = _box_d2(q, bmin, bmax, r_node)
            # push the farther child first so the nearer one is explored first
            if dl <= dr:
                stack[sp] = r_node
                stack[sp + 1] = l_node
            else:
                stack[sp] = l_node
                stack[sp + 1] = r_node
            sp += 2
    return out_i, np.sqrt(out_d)


class KdTree:
    """Immutable exact KD-tree; see :func:`build_kdtree`."""

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        if len(pts) == 0:
            raise ValueError("cannot build a KD-tree over an empty point set")
        if not np.all(np.isfinite(pts)):
            raise ValueError("KD-tree points must be finite")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.points = pts
        self.leaf_size = int(leaf_size)
        (self.perm, self.lo, self.hi, self.left, self.right,
         self.bbox_min, self.bbox_max, self._depth) = _build(pts, self.leaf_size)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def depth(self) -> int:
        return int(self._depth.max())

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def leaves(self) -> list[np.ndarray]:
        return [self.perm[a:b] for a, b, l in zip(self.lo, self.hi, self.left) if l < 0]

    def knn(self, queries, k: int):
        """Exact k nearest neighbors as (m, k) arrays, sorted by distance then index."""
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(int(k), len(self.points))
        return _query_knn(
            self.points, self.perm, self.lo, self.hi, self.left, self.right,
            self.bbox_min, self.bbox_max, q, k,
        )

    def query(self, queries):
        """Nearest neighbor of every query: ``(indices, distances)``, each (m,)."""
        idx, dist = self.knn(queries, 1)
        return idx[:, 0], dist[:, 0]


def build_kdtree(points, leaf_size: int = LEAF_SIZE) -> KdTree:
    return KdTree(points, leaf_size)


def nearest(tree: KdTree, query) -> tuple[int, float]:
    idx, dist = tree.query(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(idx[0]), float(dist[0])

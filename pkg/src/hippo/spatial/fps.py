"""Greedy farthest point sampling."""

from __future__ import annotations

import numba
import numpy as np

from ..core.types import ColoredPointCloud


@numba.njit(cache=True)
def _fps(pts, target, seed):
    n = pts.shape[0]
    out = np.empty(target, np.int64)
    radius = np.empty(target)
    dist = np.full(n, np.inf)
    cur = seed
    for s in range(target):
        out[s] = cur
        radius[s] = dist[cur]
        cx, cy, cz = pts[cur, 0], pts[cur, 1], pts[cur, 2]
        best, best_i = -1.0, 0
        for i in range(n):
            dx = pts[i, 0] - cx
            dy = pts[i, 1] - cy
            dz = pts[i, 2] - cz
            d = dx * dx + dy * dy + dz * dz
            if d < dist[i]:
                dist[i] = d
            if dist[i] > best:
                best = dist[i]
                best_i = i
        cur = best_i
    return out, np.sqrt(radius)


def fps(cloud_or_points, target_count: int, seed_index: int = 0, return_radii: bool = False):
    """Indices chosen by max-min selection, in selection order, starting at ``seed_index``.

    With ``return_radii`` also returns each pick's distance to the previously
    selected set (inf for the seed).
    """
    pts = cloud_or_points.positions if isinstance(cloud_or_points, ColoredPointCloud) else cloud_or_points
    pts = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 3))
    n = len(pts)
    if target_count <= 0:
        raise ValueError("target_count must be positive")
    if target_count > n:
        raise ValueError(f"target_count {target_count} exceeds cloud size {n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range")
    idx, radii = _fps(pts, int(target_count), int(seed_index))
    return (idx, radii) if return_radii else idx

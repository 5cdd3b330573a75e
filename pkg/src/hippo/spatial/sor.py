"""Statistical outlier removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.types import ColoredPointCloud
from .kdtree import KdTree

MODES = ("classic", "paper_literal")


@dataclass(frozen=True)
class SorParams:
    """Neighbor count and threshold multiplier.

    ``classic`` removes points whose mean neighbor distance exceeds the
    cloud-wide mean by ``k_sigma`` standard deviations.  ``paper_literal``
    removes p when ||p - mean(neighbors)|| > k * std(neighbor distances),
    evaluated per point.
    """

    n_neighbors: int = 16
    k_sigma: float = 2.0
    mode: str = "classic"

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if not self.k_sigma > 0:
            raise ValueError("k_sigma must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @staticmethod
    def paper_literal() -> "SorParams":
        return SorParams(16, 300.0, "paper_literal")


def neighbors_excluding_self(tree: KdTree, points: np.ndarray, k: int):
    """k nearest neighbors of each point in ``points`` (which built ``tree``), self dropped."""
    idx, dist = tree.knn(points, k + 1)
    own = np.arange(len(points))[:, None]
    is_self = idx == own
    # drop the self entry when present, otherwise the farthest
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
    keep = np.ones_like(idx, dtype=bool)
    keep[np.arange(len(points)), drop] = False
    return idx[keep].reshape(len(points), k), dist[keep].reshape(len(points), k)


def sor_filter(cloud: ColoredPointCloud, params: SorParams = SorParams()):
    """Returns ``(kept_cloud, removed_indices)``."""
    n = len(cloud)
    if n < params.n_neighbors + 1:
        raise ValueError(f"SOR needs more than {params.n_neighbors} points, got {n}")
    pts = cloud.positions
    tree = KdTree(pts)
    nb_idx, nb_dist = neighbors_excluding_self(tree, pts, params.n_neighbors)
    if params.mode == "classic":
        mean_d = nb_dist.mean(axis=1)
        threshold = mean_d.mean() + params.k_sigma * mean_d.std()
        remove = mean_d > threshold
    else:
        centroid = pts[nb_idx].mean(axis=1)
        offset = np.linalg.norm(pts - centroid, axis=1)
        remove = offset > params.k_sigma * nb_dist.std(axis=1)
    removed = np.flatnonzero(remove)
    return cloud.subset(np.flatnonzero(~remove)), removed

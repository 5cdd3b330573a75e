"""Pose and reconstruction metrics: ADD, ADD-S, AUC and normalized Chamfer distance."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core.sampling import sample_surface
from .core.transform import RigidTransform
from .core.types import ColoredPointCloud, TriangleMesh
from .spatial.kdtree import KdTree

AUC_MAX_THRESHOLD = 0.1
MESH_SAMPLES = 30_000
NORMALIZE_MODES = ("reference", "joint", "none")
CSV_HEADER = ("frame", "add_m", "adds_m", "time_ms")


def _model(points) -> np.ndarray:
    p = points.positions if isinstance(points, ColoredPointCloud) else points
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("model point set is empty")
    return p


def add_metric(model_points, est: RigidTransform, gt: RigidTransform) -> float:
    """Mean distance between corresponding model points under the two poses."""
    p = _model(model_points)
    return float(np.linalg.norm(est.apply(p) - gt.apply(p), axis=1).mean())


def adds_metric(model_points, est: RigidTransform, gt: RigidTransform) -> float:
    """Mean distance from each estimated model point to the closest ground-truth model point."""
    p = _model(model_points)
    _, dist = KdTree(gt.apply(p)).query(est.apply(p))
    return float(dist.mean())


def auc(errors, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Normalized area under accuracy(t) = fraction of errors <= t, for t in [0, max_threshold].

    Each error e contributes a step of height 1/n on [e, max_threshold], so the
    area is the mean of max(0, 1 - e / max_threshold).
    """
    if not max_threshold > 0:
        raise ValueError("max_threshold must be positive")
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if len(e) == 0:
        raise ValueError("cannot take the AUC of an empty error list")
    if np.any(np.isnan(e)) or np.any(e < 0):
        raise ValueError("errors must be non-negative numbers")
    return float(np.clip(1.0 - e / max_threshold, 0.0, 1.0).mean())


def as_points(x, samples: int = MESH_SAMPLES, seed: int = 0) -> np.ndarray:
    """Point positions of a cloud or array; meshes are surface-sampled."""
    if isinstance(x, TriangleMesh):
        if x.is_empty:
            raise ValueError("mesh is empty")
        return sample_surface(x, samples, np.random.default_rng(seed)).positions
    return _model(x)


def chamfer(a, b, normalize: str = "reference", samples: int = MESH_SAMPLES, seed: int = 0) -> float:
    """Squared Chamfer distance summed over both directions, times 1e3.

    ``reference`` maps both sets by ``a``'s centroid and max radius into the
    unit sphere, ``joint`` uses the union of both, ``none`` keeps meters.
    """
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
    pa = as_points(a, samples, seed)
    pb = as_points(b, samples, seed + 1)
    if normalize != "none":
        anchor = pa if normalize == "reference" else np.concatenate([pa, pb])
        c = anchor.mean(axis=0)
        r = np.linalg.norm(anchor - c, axis=1).max()
        if r == 0:
            raise ValueError("cannot normalize a single-point set")
        pa, pb = (pa - c) / r, (pb - c) / r
    _, d_ab = KdTree(pb).query(pa)
    _, d_ba = KdTree(pa).query(pb)
    return float(1e3 * (np.mean(d_ab**2) + np.mean(d_ba**2)))


@dataclass(frozen=True)
class FrameMetrics:
    frame: int
    add: float
    adds: float
    time_ms: float


@dataclass
class EvalReport:
    per_frame: list = field(default_factory=list)
    auc_add: float | None = None
    auc_adds: float | None = None
    chamfer_e3: float | None = None
    mesh_update_times_ms: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def finalize(self, max_threshold: float = AUC_MAX_THRESHOLD) -> "EvalReport":
        if self.per_frame:
            self.auc_add = auc([f.add for f in self.per_frame], max_threshold)
            self.auc_adds = auc([f.adds for f in self.per_frame], max_threshold)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_frame"] = [asdict(f) for f in self.per_frame]
        return d

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        frames = [FrameMetrics(**f) for f in d.get("per_frame", [])]
        return EvalReport(
            frames,
            d.get("auc_add"),
            d.get("auc_adds"),
            d.get("chamfer_e3"),
            list(d.get("mesh_update_times_ms", [])),
            dict(d.get("extra", {})),
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def read_json(path) -> "EvalReport":
        return EvalReport.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for f in self.per_frame:
                w.writerow([f.frame, repr(f.add), repr(f.adds), repr(f.time_ms)])

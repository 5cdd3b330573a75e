"""Keyframe selection on a viewpoint sphere and measurement-guided mesh updates.

A frame becomes a keyframe when its viewing direction, expressed in the
object frame, lands within tolerance of an unoccupied viewpoint.  Each
keyframe's measured points are registered into the object frame, and every
measured point overwrites the position and color of its nearest prior
point before the mesh is rebuilt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core.camera import backproject
from .core.sampling import sample_surface
from .core.transform import RigidTransform
from .core.types import ColoredPointCloud, Frame, TriangleMesh
from .recon import ReconParams, estimate_normals, poisson_reconstruct
from .spatial.fps import fps
from .spatial.kdtree import KdTree
from .spatial.sor import SorParams, sor_filter
from .tracker import PoseEstimate

DEFAULT_CAP = 30_000
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class FusionError(RuntimeError):
    pass


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on a golden-angle spiral."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = GOLDEN_ANGLE * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit ``a`` to unit ``b``."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # half turn about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0] if abs(a[0]) < 0.9 else [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    k = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + k + k @ k * ((1.0 - c) / s**2)


def viewing_direction(object_to_camera: RigidTransform) -> np.ndarray:
    """Unit direction from the object toward the camera, in the object frame (rotation only)."""
    return -object_to_camera.rotation.T @ np.array([0.0, 0.0, 1.0])


def min_separation(directions: np.ndarray) -> float:
    if len(directions) < 2:
        return math.pi
    cos = np.clip(directions @ directions.T, -1.0, 1.0)
    np.fill_diagonal(cos, -1.0)
    return float(np.arccos(cos.max()))


@dataclass(frozen=True)
class ViewpointSphere:
    directions: np.ndarray
    occupied: np.ndarray
    tolerance_rad: float
    anchor: RigidTransform

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        if len(d) == 0:
            raise ValueError("viewpoint sphere needs at least one direction")
        if np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)) > 1e-9:
            raise ValueError("viewpoint directions must be unit vectors")
        occ = np.asarray(self.occupied, dtype=bool).reshape(-1)
        if len(occ) != len(d):
            raise ValueError("one occupancy flag per direction")
        if not self.tolerance_rad > 0:
            raise ValueError("tolerance_rad must be positive")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "occupied", occ)

    def __len__(self) -> int:
        return len(self.directions)


@dataclass(frozen=True)
class Observation:
    trigger: bool
    viewpoint_index: int
    angle_rad: float


def make_sphere(n: int, anchor: RigidTransform) -> ViewpointSphere:
    """Fibonacci lattice turned so its first point lies on the anchor's viewing direction,
    which starts occupied; tolerance is half the minimum pairwise separation."""
    if n < 1:
        raise ValueError("viewpoint count must be at least 1")
    lattice = fibonacci_directions(n)
    # laid out in the anchor camera frame so only rotation relative to the anchor matters
    rot = anchor.rotation.T @ _align(lattice[0], np.array([0.0, 0.0, -1.0]))
    dirs = lattice @ rot.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    occupied = np.zeros(n, bool)
    occupied[0] = True
    return ViewpointSphere(dirs, occupied, 0.5 * min_separation(dirs), anchor)


def observe(sphere: ViewpointSphere, pose: RigidTransform) -> Observation:
    view = viewing_direction(pose)
    angles = np.arccos(np.clip(sphere.directions @ view, -1.0, 1.0))
    i = int(np.argmin(angles))
    hit = bool(not sphere.occupied[i] and angles[i] <= sphere.tolerance_rad)
    return Observation(hit, i, float(angles[i]))


def mark_occupied(sphere: ViewpointSphere, index: int) -> ViewpointSphere:
    if not 0 <= index < len(sphere):
        raise IndexError(f"viewpoint index {index} out of range")
    occ = sphere.occupied.copy()
    occ[index] = True
    return replace(sphere, occupied=occ)


@dataclass(frozen=True)
class FuseParams:
    """``append_distance`` is the distance beyond which a measured point is appended
    instead of replacing its nearest prior point; inf keeps replace-only updates."""

    cap: int = DEFAULT_CAP
    sor: SorParams | None = SorParams()
    recon: ReconParams = ReconParams()
    prior_samples: int = 10_000
    normal_k: int = 16
    append_distance: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.cap < 1 or self.prior_samples < 1:
            raise ValueError("cap and prior_samples must be positive")
        if not self.append_distance > 0:
            raise ValueError("append_distance must be positive")


@dataclass(frozen=True)
class FusionState:
    """``prior_cloud`` holds the current (partly replaced) prior points in the object frame."""

    prior_cloud: ColoredPointCloud
    accumulated_measured: ColoredPointCloud
    replaced_flags: np.ndarray
    current_mesh: TriangleMesh
    keyframe_count: int = 0
    appended: ColoredPointCloud = field(default_factory=ColoredPointCloud.empty)

    def __post_init__(self):
        if len(self.replaced_flags) != len(self.prior_cloud):
            raise ValueError("one replaced flag per prior point")

    def surface_cloud(self) -> ColoredPointCloud:
        if len(self.appended) == 0:
            return self.prior_cloud
        return ColoredPointCloud.concatenate([self.prior_cloud, self.appended])


def _mesh_or_fail(cloud: ColoredPointCloud, params: ReconParams) -> TriangleMesh:
    mesh = poisson_reconstruct(cloud, params)
    if mesh.is_empty:
        raise FusionError("reconstruction produced an empty mesh")
    return mesh


def init_fusion(prior_mesh: TriangleMesh, params: FuseParams = FuseParams()) -> FusionState:
    """Sample the metric prior densely and remesh it to get the starting state."""
    if prior_mesh.is_empty:
        raise ValueError("prior mesh is empty")
    cloud = sample_surface(prior_mesh, params.prior_samples, np.random.default_rng(params.seed))
    return FusionState(
        prior_cloud=cloud,
        accumulated_measured=ColoredPointCloud(np.zeros((0, 3)), normals=np.zeros((0, 3))),
        replaced_flags=np.zeros(len(cloud), bool),
        current_mesh=_mesh_or_fail(cloud, params.recon),
    )


def register_frame(frame: Frame, pose: RigidTransform, params: FuseParams = FuseParams()) -> ColoredPointCloud:
    """Backproject, denoise, orient normals toward the camera and move into the object frame."""
    cloud = backproject(frame)
    if params.sor is not None and len(cloud) > params.sor.n_neighbors:
        cloud, _ = sor_filter(cloud, params.sor)
    if len(cloud) <= params.normal_k:
        raise FusionError(f"keyframe has only {len(cloud)} usable points")
    cloud = estimate_normals(cloud, params.normal_k, viewpoint=np.zeros(3))
    to_obj = pose.inverse()
    return ColoredPointCloud(to_obj.apply(cloud.positions), cloud.colors, to_obj.apply_vectors(cloud.normals))


def cap_cloud(cloud: ColoredPointCloud, cap: int) -> ColoredPointCloud:
    """Farthest-point downsample to exactly ``cap`` points (original order kept)."""
    if len(cloud) <= cap:
        return cloud
    return cloud.subset(np.sort(fps(cloud, cap, 0)))


def replace_nearest(prior: ColoredPointCloud, measured: ColoredPointCloud, append_distance: float = math.inf):
    """Overwrite each claimed prior point with its closest measured point.

    Returns ``(updated_prior, claimed_mask, appended_cloud)``.  Collisions keep
    the smallest distance, then the lowest measured index.
    """
    if len(measured) == 0:
        return prior, np.zeros(len(prior), bool), measured
    idx, dist = KdTree(prior.positions).query(measured.positions)
    far = dist > append_distance
    cand = np.flatnonzero(~far)
    order = np.lexsort((cand, dist[cand], idx[cand]))
    cand = cand[order]
    first = np.ones(len(cand), bool)
    first[1:] = idx[cand][1:] != idx[cand][:-1]
    winners = cand[first]
    targets = idx[winners]
    pos, col = prior.positions.copy(), prior.colors.copy()
    nrm = prior.normals.copy()
    pos[targets] = measured.positions[winners]
    col[targets] = measured.colors[winners]
    nrm[targets] = measured.normals[winners]
    claimed = np.zeros(len(prior), bool)
    claimed[targets] = True
    return ColoredPointCloud(pos, col, nrm), claimed, measured.subset(np.flatnonzero(far))


def fuse_keyframe(state: FusionState, frame: Frame, pose: PoseEstimate, params: FuseParams = FuseParams()) -> FusionState:
    """Register the keyframe, cap the accumulated cloud, replace nearest prior points, remesh."""
    if not pose.converged:
        raise FusionError("refusing to fuse a keyframe with an unconverged pose")
    new = register_frame(frame, pose.object_to_camera, params)
    acc = cap_cloud(ColoredPointCloud.concatenate([state.accumulated_measured, new]), params.cap)
    prior, claimed, appended = replace_nearest(state.prior_cloud, acc, params.append_distance)
    updated = FusionState(
        prior_cloud=prior,
        accumulated_measured=acc,
        replaced_flags=state.replaced_flags | claimed,
        current_mesh=state.current_mesh,
        keyframe_count=state.keyframe_count + 1,
        appended=appended,
    )
    return replace(updated, current_mesh=_mesh_or_fail(updated.surface_cloud(), params.recon))

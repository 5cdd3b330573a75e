"""Pose initialization and ICP tracking against the current reference mesh.

ICP estimates the camera-to-object transform X aligning measured points to
the reference; the reported pose is its inverse (object-to-camera).  The
point-to-plane step linearizes about the centroid of the transformed
measured points, so results conjugate exactly under rigid changes of frame.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .core.camera import backproject
from .core.sampling import sample_surface
from .core.transform import RigidTransform, rotvec_to_matrix
from .core.types import ColoredPointCloud, Frame, TriangleMesh
from .spatial.kdtree import KdTree
from .spatial.sor import SorParams, sor_filter

VARIANTS = ("point_to_point", "point_to_plane")
MIN_CORRESPONDENCES = 6
# relative singular-value floor of the point-to-plane system
PLANE_RCOND = 0.1


class TrackingError(RuntimeError):
    pass


@dataclass(frozen=True)
class IcpParams:
    """ICP settings.

    ``cutoff_schedule`` multiplies ``correspondence_cutoff`` stage by stage;
    a stage ends when the update falls below ``convergence_delta`` and the
    last stage decides convergence.  All stages share ``max_iterations``.
    ``robust_scale`` (meters) switches on Cauchy weighting of point-to-plane
    residuals in the last stage only, so coarse capture is unaffected.
    """

    max_iterations: int = 30
    correspondence_cutoff: float = 0.02
    convergence_delta: float = 1e-5
    variant: str = "point_to_plane"
    cutoff_schedule: tuple = (1.0,)
    robust_scale: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not (self.correspondence_cutoff > 0 and self.convergence_delta > 0):
            raise ValueError("cutoff and convergence delta must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.robust_scale is not None and not self.robust_scale > 0:
            raise ValueError("robust_scale must be positive")
        sched = tuple(float(m) for m in self.cutoff_schedule)
        if not sched or min(sched) <= 0:
            raise ValueError("cutoff_schedule needs positive multipliers")
        object.__setattr__(self, "cutoff_schedule", sched)


@dataclass(frozen=True)
class TrackParams:
    """Per-frame tracking front end wrapped around ICP."""

    icp: IcpParams = IcpParams(cutoff_schedule=(4.0, 2.0, 1.0), robust_scale=0.005)
    sor: Optional[SorParams] = SorParams()
    max_measured_points: int = 3000
    reference_samples: int = 6000
    seed: int = 0


@dataclass(frozen=True)
class PoseEstimate:
    object_to_camera: RigidTransform
    residual_rms: float
    iterations_used: int
    converged: bool


def sample_mesh_surface(mesh: TriangleMesh, count: int, seed: int = 0) -> ColoredPointCloud:
    """Area-weighted uniform surface samples carrying face normals."""
    return sample_surface(mesh, count, np.random.default_rng(seed))


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform taking ``src`` onto ``dst`` (rows correspond)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def _plane_step(x: np.ndarray, q: np.ndarray, n: np.ndarray, robust_scale=None) -> RigidTransform:
    c = x.mean(axis=0)
    a = np.hstack([np.cross(x - c, n), n])
    b = -np.einsum("ij,ij->i", n, x - q)
    if robust_scale is not None:
        # Cauchy weights damp residuals from surfaces the reference gets wrong
        w = np.sqrt(1.0 / (1.0 + (b / robust_scale) ** 2))
        a, b = a * w[:, None], b * w
    # rotation columns scaled to meters of motion so singular values are comparable;
    # directions the surface cannot constrain (a cylinder's axis spin) get no update
    lever = np.sqrt(np.mean(np.sum((x - c) ** 2, axis=1))) or 1.0
    a[:, :3] /= lever
    sol = np.linalg.lstsq(a, b, rcond=PLANE_RCOND)[0]
    sol[:3] /= lever
    r = rotvec_to_matrix(sol[:3])
    return RigidTransform(r, c + sol[3:] - r @ c)


def _residual(x, reference, idx, dist, variant, cutoff) -> float:
    # point-to-plane distance for the plane variant, else point distance; truncated
    if variant == "point_to_plane":
        dist = np.minimum(dist, np.abs(np.einsum("ij,ij->i", reference.normals[idx], x - reference.positions[idx])))
    return float(np.sqrt(np.mean(np.minimum(dist, cutoff) ** 2)))


def _front_facing(reference: ColoredPointCloud, camera_in_ref: np.ndarray) -> ColoredPointCloud:
    if not reference.has_normals:
        return reference
    facing = np.einsum("ij,ij->i", reference.normals, camera_in_ref - reference.positions) > 0
    return reference.subset(np.flatnonzero(facing)) if facing.sum() >= MIN_CORRESPONDENCES else reference


def refine_pose(
    measured: ColoredPointCloud,
    reference: ColoredPointCloud,
    init: RigidTransform,
    params: IcpParams = IcpParams(),
    viewpoint=None,
    tree: Optional[KdTree] = None,
) -> PoseEstimate:
    """ICP from ``init`` (object-to-camera); returns the lowest-residual pose visited.

    ``residual_rms`` is the RMS of nearest-reference distances (point-to-plane
    for that variant) truncated at the final cutoff.  If ``viewpoint`` (camera-frame point) is given, only
    reference points facing it under ``init`` take part.
    """
    if len(measured) == 0 or len(reference) == 0:
        raise TrackingError("ICP needs non-empty measured and reference clouds")
    if params.variant == "point_to_plane" and not reference.has_normals:
        raise TrackingError("point-to-plane ICP needs reference normals")
    x_pose = init.inverse()  # camera -> object
    if viewpoint is not None:
        reference = _front_facing(reference, x_pose.apply(np.asarray(viewpoint, float)[None])[0])
        tree = None
    tree = tree or KdTree(reference.positions)
    m = measured.positions
    final_cut = params.correspondence_cutoff * params.cutoff_schedule[-1]
    stage = 0
    best = (np.inf, x_pose)
    converged = False
    it = 0
    x = x_pose.apply(m)
    idx, dist = tree.query(x)
    while True:
        res = _residual(x, reference, idx, dist, params.variant, final_cut)
        if res < best[0]:
            best = (res, x_pose)
        if converged or it >= params.max_iterations:
            break
        cut = params.correspondence_cutoff * params.cutoff_schedule[stage]
        inl = dist <= cut
        if inl.sum() < MIN_CORRESPONDENCES:
            raise TrackingError(f"only {int(inl.sum())} correspondences within {cut:.4f} m")
        q = reference.positions[idx[inl]]
        if params.variant == "point_to_point":
            step = kabsch(x[inl], q)
        else:
            final = stage == len(params.cutoff_schedule) - 1
            step = _plane_step(x[inl], q, reference.normals[idx[inl]], params.robust_scale if final else None)
        x_pose = step @ x_pose
        x_new = x_pose.apply(m)
        delta = float(np.sqrt(np.mean(np.sum((x_new - x) ** 2, axis=1))))
        x = x_new
        it += 1
        if delta < params.convergence_delta:
            if stage == len(params.cutoff_schedule) - 1:
                converged = True
            else:
                # a settled coarse stage goes straight to the final cutoff
                stage = len(params.cutoff_schedule) - 1
        elif stage < len(params.cutoff_schedule) - 1 and delta < cut * 0.05:
            stage += 1
        idx, dist = tree.query(x)
    return PoseEstimate(best[1].inverse(), best[0], it, converged)


def init_pose(
    first_cloud: ColoredPointCloud,
    prior_mesh_metric: TriangleMesh,
    params: IcpParams = IcpParams(cutoff_schedule=(4.0, 2.0, 1.0)),
    init_rotation=None,
    reference_samples: int = 8000,
    seed: int = 0,
) -> PoseEstimate:
    """Anchor the object frame: rotation ``init_rotation`` (identity by default),
    translation matching the measured centroid to the rotated prior surface centroid,
    then ICP."""
    if len(first_cloud) == 0:
        raise TrackingError("first-frame cloud is empty")
    r = np.eye(3) if init_rotation is None else np.asarray(init_rotation, dtype=np.float64)
    ref = sample_mesh_surface(prior_mesh_metric, reference_samples, seed)
    areas = prior_mesh_metric.face_areas()
    centroid = (prior_mesh_metric.triangles().mean(axis=1) * areas[:, None]).sum(axis=0) / areas.sum()
    t = first_cloud.positions.mean(axis=0) - r @ centroid
    return refine_pose(first_cloud, ref, RigidTransform(r, t), params, viewpoint=np.zeros(3))


def _subsample(cloud: ColoredPointCloud, limit: int) -> ColoredPointCloud:
    if len(cloud) <= limit:
        return cloud
    idx = np.unique(np.linspace(0, len(cloud) - 1, limit).round().astype(np.int64))
    return cloud.subset(idx)


def measured_cloud(frame: Frame, params: TrackParams) -> ColoredPointCloud:
    """Masked backprojection, thinned to a working size, then denoised."""
    cloud = _subsample(backproject(frame), 2 * params.max_measured_points)
    if params.sor is not None and len(cloud) > params.sor.n_neighbors:
        cloud, _ = sor_filter(cloud, params.sor)
    return _subsample(cloud, params.max_measured_points)


def track(
    frame: Frame,
    previous: PoseEstimate,
    reference_mesh: TriangleMesh,
    params: TrackParams = TrackParams(),
    init: RigidTransform | None = None,
    reference: ColoredPointCloud | None = None,
) -> PoseEstimate:
    """One tracking step.  ``init`` overrides the starting pose (e.g. a motion prediction);
    ``reference`` reuses a surface sampling of ``reference_mesh``.
    Degenerate input or ICP failure yields ``converged=False`` with the previous pose."""
    start = previous.object_to_camera if init is None else init
    coast = PoseEstimate(previous.object_to_camera, previous.residual_rms, 0, False)
    cloud = measured_cloud(frame, params)
    if len(cloud) < MIN_CORRESPONDENCES:
        return coast
    if reference is None:
        reference = sample_mesh_surface(reference_mesh, params.reference_samples, params.seed)
    try:
        return refine_pose(cloud, reference, start, params.icp)
    except TrackingError:
        return coast


class Refiner(Protocol):
    def refine(self, frame: Frame, init: RigidTransform, reference_mesh: TriangleMesh, previous: PoseEstimate) -> PoseEstimate: ...


class IcpRefiner:
    """Built-in refiner; caches the reference sampling until the mesh changes."""

    def __init__(self, params: TrackParams = TrackParams()):
        self.params = params
        self._mesh = None
        self._reference = None

    def refine(self, frame, init, reference_mesh, previous):
        if reference_mesh is not self._mesh:
            self._mesh = reference_mesh
            self._reference = sample_mesh_surface(reference_mesh, self.params.reference_samples, self.params.seed)
        return track(frame, previous, reference_mesh, self.params, init=init, reference=self._reference)


class ExternalRefiner:
    """Delegates to an executable: JSON ``{frame_dir, init_pose}`` on stdin, a 4x4 pose as JSON on stdout."""

    def __init__(self, command: str, timeout: float | None = 60.0):
        self.command = shlex.split(command)
        self.timeout = timeout

    def refine(self, frame, init, reference_mesh, previous):
        from .dreamer import write_request

        with tempfile.TemporaryDirectory(prefix="hippo_frame_") as tmp:
            write_request(tmp, frame)
            payload = json.dumps({"frame_dir": tmp, "init_pose": init.matrix().tolist()})
            try:
                proc = subprocess.run(self.command, input=payload, capture_output=True, text=True, timeout=self.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise TrackingError(f"refiner {self.command[0]!r} could not run: {exc}") from exc
        if proc.returncode != 0:
            raise TrackingError(f"refiner exited with status {proc.returncode}: {proc.stderr.strip()}")
        try:
            pose = RigidTransform.from_matrix(np.asarray(json.loads(proc.stdout), dtype=np.float64))
        except (ValueError, TypeError) as exc:
            raise TrackingError(f"refiner printed an invalid pose: {exc}") from exc
        # the protocol reports no residual or iteration count
        return PoseEstimate(pose, 0.0, 0, True)

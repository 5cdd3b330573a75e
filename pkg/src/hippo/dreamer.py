"""Prior-mesh sources: a corrupting oracle and an external image-to-3D adapter.

Prior meshes live in a canonical frame: origin at the surface centroid, the
first-view camera on the +z side looking toward -z, image x along +x and
image y along -y.  A point seen by the first camera maps as::

    p_canon = F (p_cam - c_cam)      F = diag(1, -1, -1)

where c_cam is the surface centroid in that camera's frame.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core.camera import backproject
from .core.frames import pose_to_json, write_frame, write_meta
from .core.meshops import subdivide_midpoint, vertex_normals, weld_vertices
from .core.ply import PlyError, read_mesh
from .core.transform import RigidTransform
from .core.types import CameraIntrinsics, ColoredPointCloud, Frame, TriangleMesh
from .scale import compute_obb
from .sim.bvh import Bvh
from .sim.render import ray_cast_depth

CANONICAL_FLIP = np.diag([1.0, -1.0, -1.0])
PRIOR_NAME = "prior.ply"
VISIBILITY_TOL = 1e-4
FRAMING_FACTOR = 2.5


class DreamerError(Exception):
    """Base class for prior acquisition failures."""


class PriorMissingError(DreamerError):
    pass


class PriorParseError(DreamerError):
    def __init__(self, message: str, offset=None):
        super().__init__(message)
        self.offset = offset


class AdapterError(DreamerError):
    def __init__(self, message: str, returncode: int, stderr: str):
        super().__init__(f"{message}\n{stderr}".rstrip())
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class CorruptionParams:
    """``hidden_geom_noise=None`` means 5% of the object's max OBB side."""

    hidden_geom_noise: float | None = None
    hidden_color_shift: float = 0.2
    normalize_scale: bool = True
    rng_seed: int = 0
    octaves: int = 3
    base_cycles: float = 2.0

    def __post_init__(self):
        if self.hidden_geom_noise is not None and self.hidden_geom_noise < 0:
            raise ValueError("hidden_geom_noise must be non-negative")
        if self.hidden_color_shift < 0:
            raise ValueError("hidden_color_shift must be non-negative")
        if self.octaves < 1 or not self.base_cycles > 0:
            raise ValueError("octaves must be >= 1 and base_cycles positive")


def surface_centroid(mesh: TriangleMesh) -> np.ndarray:
    areas = mesh.face_areas()
    return (mesh.triangles().mean(axis=1) * areas[:, None]).sum(axis=0) / areas.sum()


def canonical_transform(gt_mesh: TriangleMesh, first_view: RigidTransform) -> RigidTransform:
    """Object-frame to canonical-frame transform for the given object-to-camera first view."""
    c_cam = first_view.apply(surface_centroid(gt_mesh)[None])[0]
    return RigidTransform(CANONICAL_FLIP, -CANONICAL_FLIP @ c_cam) @ first_view


def _lattice_hash(ix, iy, iz, seed):
    # integer lattice -> [-1, 1], deterministic in (cell, seed)
    with np.errstate(over="ignore"):
        h = (ix * np.int64(73856093)) ^ (iy * np.int64(19349663)) ^ (iz * np.int64(83492791)) ^ np.int64(seed * 2654435761 % (2**31))
        h = h.astype(np.uint64)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xFF51AFD7ED558CCD)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xC4CEB9FE1A85EC53)
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-52 - 1.0


def value_noise(points, frequency: float, octaves: int = 3, seed: int = 0) -> np.ndarray:
    """Smooth fractal value noise (smoothstep-trilinear lattice, halved amplitude per octave)."""
    p = np.asarray(points, dtype=np.float64)
    total = np.zeros(len(p))
    norm = 0.0
    for o in range(octaves):
        g = p * frequency * 2.0**o
        base = np.floor(g).astype(np.int64)
        f = g - base
        w = f * f * (3.0 - 2.0 * f)
        acc = np.zeros(len(p))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    val = _lattice_hash(base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz, seed * 131 + o)
                    wx = w[:, 0] if dx else 1 - w[:, 0]
                    wy = w[:, 1] if dy else 1 - w[:, 1]
                    wz = w[:, 2] if dz else 1 - w[:, 2]
                    acc += wx * wy * wz * val
        total += 0.5**o * acc
        norm += 0.5**o
    return total / norm


def visible_vertices(mesh: TriangleMesh, camera_center, normals=None) -> np.ndarray:
    """Vertices facing ``camera_center`` whose camera ray first hits within 1e-4 m of them."""
    normals = vertex_normals(mesh) if normals is None else normals
    to_cam = np.asarray(camera_center, dtype=np.float64) - mesh.vertices
    dist = np.linalg.norm(to_cam, axis=1)
    facing = np.einsum("ij,ij->i", normals, to_cam) > 0
    dirs = -to_cam / np.where(dist > 0, dist, 1.0)[:, None]
    _, t, _, _ = Bvh(mesh).intersect(camera_center, dirs)
    return facing & (np.abs(t - dist) <= VISIBILITY_TOL)


def _refine(mesh: TriangleMesh, max_edge: float, max_faces: int = 60_000) -> TriangleMesh:
    while len(mesh.faces) * 4 <= max_faces:
        tri = mesh.triangles()
        longest = np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2).max()
        if longest <= max_edge:
            break
        mesh = subdivide_midpoint(mesh)
    return mesh


def synth_prior(gt_mesh: TriangleMesh, first_view: RigidTransform, params: CorruptionParams = CorruptionParams()) -> TriangleMesh:
    """Emulate an image-to-3D prior: faithful where the first view saw, plausible-but-wrong elsewhere.

    ``first_view`` is the object-to-camera pose of the first frame.  The
    result is expressed in the canonical frame and, if requested, rescaled to
    unit max OBB side.
    """
    if gt_mesh.is_empty:
        raise ValueError("ground-truth mesh is empty")
    to_canon = canonical_transform(gt_mesh, first_view)
    mesh = gt_mesh.transformed(to_canon)
    max_side = compute_obb(mesh.vertices).max_side
    amp = 0.05 * max_side if params.hidden_geom_noise is None else params.hidden_geom_noise
    if amp > 0 or params.hidden_color_shift > 0:
        mesh = _refine(mesh, 0.03 * max_side)
        # canonical camera of the first view: F (0 - c_cam)
        cam_center = to_canon.apply(first_view.inverse().translation[None])[0]
        welded, mapping = weld_vertices(mesh)
        normals = vertex_normals(welded)[mapping]
        visible = visible_vertices(mesh, cam_center, normals)
        # coincident split vertices must agree or the surface would crack
        vis_w = np.zeros(len(welded.vertices), bool)
        np.logical_or.at(vis_w, mapping, visible)
        hidden = ~vis_w[mapping]
        freq = params.base_cycles / max_side
        verts, colors = mesh.vertices.copy(), mesh.vertex_colors.copy()
        p = verts[hidden]
        if amp > 0:
            verts[hidden] += amp * value_noise(p, freq, params.octaves, params.rng_seed)[:, None] * normals[hidden]
        if params.hidden_color_shift > 0:
            for ch in range(3):
                shift = value_noise(p, freq, params.octaves, params.rng_seed + 1000 + ch)
                colors[hidden, ch] += params.hidden_color_shift * shift
        mesh = TriangleMesh(verts, mesh.faces, np.clip(colors, 0.0, 1.0))
    if params.normalize_scale:
        side = compute_obb(mesh.vertices).max_side
        mesh = TriangleMesh(mesh.vertices / side, mesh.faces, mesh.vertex_colors)
    return mesh


def canonical_camera(prior_mesh: TriangleMesh, intrinsics: CameraIntrinsics) -> RigidTransform:
    """Camera-to-canonical pose on +z looking at the origin, framed to fit the whole mesh."""
    radius = np.linalg.norm(prior_mesh.vertices, axis=1).max()
    half_fov = min(np.arctan2(intrinsics.width / 2, intrinsics.fx), np.arctan2(intrinsics.height / 2, intrinsics.fy))
    distance = FRAMING_FACTOR * radius / np.tan(half_fov)
    return RigidTransform(CANONICAL_FLIP, [0.0, 0.0, distance])


def first_view_partial(prior_mesh: TriangleMesh, intrinsics: CameraIntrinsics, camera: RigidTransform | None = None) -> ColoredPointCloud:
    """Backprojected rendering of the prior from its canonical first view (camera frame)."""
    if prior_mesh.is_empty:
        raise ValueError("prior mesh is empty")
    cam = canonical_camera(prior_mesh, intrinsics) if camera is None else camera
    depth, mask, color = ray_cast_depth(prior_mesh, cam, intrinsics)
    if not mask.any():
        raise ValueError("first-view rendering of the prior hit nothing")
    return backproject(Frame(depth, color, mask, intrinsics))


def write_request(request_dir, frame: Frame) -> Path:
    """Lay out the first frame in the adapter request format."""
    out = Path(request_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frame(out, 0, frame.depth, frame.color, frame.mask)
    entry = {"index": 0}
    if frame.gt_pose is not None:
        entry["gt_pose"] = pose_to_json(frame.gt_pose)
    write_meta(out, frame.intrinsics, [entry])
    return out


def _load_prior(path: Path) -> TriangleMesh:
    if not path.is_file():
        raise PriorMissingError(f"prior mesh not found: {path}")
    try:
        mesh = read_mesh(path)
    except PlyError as exc:
        raise PriorParseError(f"{path}: {exc}", getattr(exc, "offset", None)) from exc
    except ValueError as exc:
        raise PriorParseError(f"{path}: invalid mesh ({exc})") from exc
    if mesh.is_empty:
        raise PriorParseError(f"{path}: mesh has no faces")
    return mesh


def external_prior(request_dir, adapter: str, mode: str = "directory", timeout: float | None = 600.0) -> TriangleMesh:
    """Fetch a prior mesh produced outside this package.

    ``directory`` mode reads ``<adapter>/prior.ply``.  ``command`` mode runs
    ``adapter request_dir`` and reads ``request_dir/prior.ply`` afterwards.
    """
    request_dir = Path(request_dir)
    if mode == "directory":
        return _load_prior(Path(adapter) / PRIOR_NAME)
    if mode != "command":
        raise ValueError(f"unknown adapter mode {mode!r}")
    cmd = shlex.split(adapter) + [str(request_dir)]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout, check=False)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise AdapterError(f"adapter {cmd[0]!r} could not run", -1, str(exc)) from exc
    if proc.returncode != 0:
        raise AdapterError(f"adapter exited with status {proc.returncode}", proc.returncode, proc.stderr)
    return _load_prior(request_dir / PRIOR_NAME)

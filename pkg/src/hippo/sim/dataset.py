"""Write rendered ring sequences in the frame-directory format."""

from __future__ import annotations

from pathlib import Path

from ..core.frames import pose_to_json, write_frame, write_meta
from ..core.ply import write_mesh
from ..core.types import CameraIntrinsics, TriangleMesh
from .bvh import Bvh
from .primitives import make_primitive
from .render import NoiseModel, render_frame, ring_trajectory

GT_MESH_NAME = "gt_mesh.ply"


def write_dataset(mesh: TriangleMesh, trajectory, intrinsics: CameraIntrinsics, noise: NoiseModel | None, out_dir, extra: dict | None = None) -> int:
    """Render every camera-to-world pose of ``trajectory`` and write frames, meta.json and the GT mesh.

    The object frame is the world frame, so each frame's gt_pose
    (object-to-camera) is the inverse camera pose.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bvh = Bvh(mesh)
    entries = []
    for i, cam in enumerate(trajectory):
        depth, mask, color = render_frame(bvh, cam, intrinsics, noise, stream=i)
        write_frame(out, i, depth, color, mask)
        entries.append({"index": i, "gt_pose": pose_to_json(cam.inverse())})
    info = {"gt_mesh": GT_MESH_NAME}
    if noise is not None:
        info["noise"] = {"gaussian_sigma": noise.gaussian_sigma, "dropout_prob": noise.dropout_prob, "rng_seed": noise.rng_seed}
    if extra:
        info.update(extra)
    write_mesh(out / GT_MESH_NAME, mesh)
    write_meta(out, intrinsics, entries, {"scene": info})
    return len(entries)


def generate_scene(
    out_dir,
    kind: str = "mug",
    n_frames: int = 16,
    dims=None,
    color_scheme: str = "gradient",
    radius: float = 0.5,
    height: float = 0.3,
    noise: NoiseModel | None = None,
    intrinsics: CameraIntrinsics | None = None,
) -> int:
    """Primitive on a ring trajectory, written to ``out_dir``."""
    mesh = make_primitive(kind, dims, color_scheme)
    traj = ring_trajectory((0.0, 0.0, 0.0), radius, height, n_frames)
    k = intrinsics or CameraIntrinsics.default()
    extra = {"kind": kind, "ring_radius": radius, "ring_height": height}
    return write_dataset(mesh, traj, k, noise, out_dir, extra)

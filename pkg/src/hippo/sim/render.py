"""Camera trajectories, ray-cast RGB-D rendering and depth noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.camera import pixel_rays
from ..core.transform import RigidTransform
from ..core.types import CameraIntrinsics
from .bvh import Bvh


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose at ``position`` with +z toward ``target`` and image-down along -up."""
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    y = -(up - np.dot(up, z) * z)
    if np.linalg.norm(y) < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return RigidTransform(np.stack([x, y, z], axis=1), position)


def ring_trajectory(center=(0.0, 0.0, 0.0), radius: float = 0.5, height: float = 0.3, n_frames: int = 16, start_azimuth: float = 0.0):
    """Camera-to-world poses evenly spaced on a horizontal circle, all looking at ``center``.

    Azimuth 0 puts the camera on the +x side; azimuth increases counter-clockwise seen from +z.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    poses = []
    for k in range(n_frames):
        a = start_azimuth + 2.0 * np.pi * k / n_frames
        pos = center + np.array([radius * np.cos(a), radius * np.sin(a), height])
        poses.append(look_at(pos, center))
    return poses


def ray_cast_depth(mesh, camera: RigidTransform, intrinsics: CameraIntrinsics):
    """Render ``(depth, mask, color)`` of a mesh (or prebuilt Bvh) seen from a camera-to-world pose.

    Depth is the camera-frame z of the nearest hit, 0 where nothing is hit;
    color is the barycentric blend of vertex colors in [0, 1].
    """
    bvh = mesh if isinstance(mesh, Bvh) else Bvh(mesh)
    rays = pixel_rays(intrinsics) @ camera.rotation.T
    tri, t, u, v = bvh.intersect(camera.translation, rays)
    h, w = intrinsics.height, intrinsics.width
    hit = tri >= 0
    depth = np.where(hit, t, 0.0)
    color = np.zeros((h * w, 3))
    if hit.any():
        m = bvh.mesh
        f = m.faces[tri[hit]]
        uu, vv = u[hit, None], v[hit, None]
        color[hit] = (1 - uu - vv) * m.vertex_colors[f[:, 0]] + uu * m.vertex_colors[f[:, 1]] + vv * m.vertex_colors[f[:, 2]]
    return depth.reshape(h, w), hit.reshape(h, w), np.clip(color, 0.0, 1.0).reshape(h, w, 3)


@dataclass(frozen=True)
class NoiseModel:
    """Depth noise: N(0, (sigma * d^2)^2) per valid pixel, then dropout."""

    gaussian_sigma: float = 0.0
    dropout_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return x ^ (x >> np.uint64(31))


def pixel_uniforms(seed: int, stream: int, n_pixels: int, lane: int) -> np.ndarray:
    """Uniforms in (0, 1) keyed by (seed, stream, pixel index, lane); independent of evaluation order."""
    key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], np.uint64))
    key = _splitmix64(key ^ np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
    idx = np.arange(n_pixels, dtype=np.uint64) * np.uint64(4) + np.uint64(lane)
    with np.errstate(over="ignore"):
        bits = _splitmix64(key + idx)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def add_depth_noise(depth, model: NoiseModel, stream: int = 0) -> np.ndarray:
    """Perturb valid pixels with depth-quadratic Gaussian noise and random dropout.

    ``stream`` separates frames sharing one model seed.
    """
    depth = np.asarray(depth, dtype=np.float64)
    out = depth.copy()
    valid = depth > 0
    n = depth.size
    if model.gaussian_sigma > 0:
        u1 = pixel_uniforms(model.rng_seed, stream, n, 0)
        u2 = pixel_uniforms(model.rng_seed, stream, n, 1)
        gauss = (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(depth.shape)
        out = np.where(valid, depth + model.gaussian_sigma * depth**2 * gauss, 0.0)
    if model.dropout_prob > 0:
        drop = pixel_uniforms(model.rng_seed, stream, n, 2).reshape(depth.shape) < model.dropout_prob
        out[drop] = 0.0
    out[out < 0] = 0.0
    return out


def render_frame(mesh_or_bvh, camera: RigidTransform, intrinsics: CameraIntrinsics, noise: NoiseModel | None = None, stream: int = 0):
    depth, mask, color = ray_cast_depth(mesh_or_bvh, camera, intrinsics)
    if noise is not None:
        depth = add_depth_noise(depth, noise, stream)
    return depth, mask, color


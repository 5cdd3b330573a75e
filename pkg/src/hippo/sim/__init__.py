from .bvh import Bvh, brute_force_intersect
from .dataset import GT_MESH_NAME, generate_scene, write_dataset
from .primitives import DEFAULT_DIMS, make_primitive
from .render import NoiseModel, add_depth_noise, look_at, ray_cast_depth, render_frame, ring_trajectory

__all__ = [
    "Bvh",
    "DEFAULT_DIMS",
    "GT_MESH_NAME",
    "NoiseModel",
    "add_depth_noise",
    "brute_force_intersect",
    "generate_scene",
    "look_at",
    "make_primitive",
    "ray_cast_depth",
    "render_frame",
    "ring_trajectory",
    "write_dataset",
]

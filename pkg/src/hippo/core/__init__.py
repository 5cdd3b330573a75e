from .camera import backproject, pixel_rays, project
from .frames import DatasetError, FrameDirectory, write_frame, write_meta
from .sampling import sample_surface
from .ply import PlyError, read_cloud, read_mesh, read_ply, write_cloud, write_mesh
from .transform import RigidTransform, compose, invert, transform_cloud
from .types import CameraIntrinsics, ColoredPointCloud, Frame, TriangleMesh

__all__ = [
    "CameraIntrinsics",
    "ColoredPointCloud",
    "DatasetError",
    "Frame",
    "FrameDirectory",
    "PlyError",
    "RigidTransform",
    "TriangleMesh",
    "backproject",
    "compose",
    "invert",
    "pixel_rays",
    "project",
    "read_cloud",
    "read_mesh",
    "read_ply",
    "sample_surface",
    "transform_cloud",
    "write_cloud",
    "write_frame",
    "write_mesh",
    "write_meta",
]

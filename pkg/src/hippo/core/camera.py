"""Pinhole camera model: depth backprojection and point projection."""

from __future__ import annotations

import numpy as np

from .types import CameraIntrinsics, ColoredPointCloud, Frame


def backproject(frame: Frame) -> ColoredPointCloud:
    """Camera-frame cloud of every masked pixel with valid depth.

    Pixel (u, v) with depth d maps to ((u - cx) d / fx, (v - cy) d / fy, d).
    Returns an empty cloud when nothing survives the mask.
    """
    k = frame.intrinsics
    valid = frame.mask & (frame.depth > 0) & np.isfinite(frame.depth)
    v, u = np.nonzero(valid)
    d = frame.depth[v, u]
    pts = np.stack([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d], axis=1)
    return ColoredPointCloud(pts, frame.color[v, u])


def project(points, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Continuous pixel coordinates (u, v) of camera-frame points."""
    p = np.asarray(points, dtype=np.float64)
    return np.stack(
        [p[:, 0] * intrinsics.fx / p[:, 2] + intrinsics.cx, p[:, 1] * intrinsics.fy / p[:, 2] + intrinsics.cy],
        axis=1,
    )


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """(h*w, 3) un-normalized camera-frame ray directions with z = 1, row-major."""
    v, u = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width]
    return np.stack(
        [
            (u.ravel() - intrinsics.cx) / intrinsics.fx,
            (v.ravel() - intrinsics.cy) / intrinsics.fy,
            np.ones(u.size),
        ],
        axis=1,
    )

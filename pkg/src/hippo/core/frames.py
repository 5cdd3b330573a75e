"""On-disk frame directories.

Layout::

    meta.json            {fx, fy, cx, cy, width, height, frames: [{index, gt_pose}]}
    depth_%06d.pgm       P5, maxval 65535, millimeters, 0 = invalid
    color_%06d.ppm       P6, 8-bit
    mask_%06d.pgm        P5, 8-bit, 255 = object

``gt_pose`` is an optional 4x4 row-major object-to-camera matrix.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .pnm import read_pnm, write_pnm
from .transform import RigidTransform
from .types import CameraIntrinsics, Frame


class DatasetError(Exception):
    """Missing or malformed frame-directory content."""


def depth_to_mm(depth_m: np.ndarray) -> np.ndarray:
    mm = np.round(np.asarray(depth_m) * 1000.0)
    return np.clip(np.where(np.isfinite(mm), mm, 0), 0, 65535).astype(np.uint16)


def write_frame(directory, index: int, depth_m, color, mask) -> None:
    d = Path(directory)
    write_pnm(d / f"depth_{index:06d}.pgm", depth_to_mm(depth_m), maxval=65535)
    col = np.asarray(color)
    if col.dtype != np.uint8:
        col = np.clip(np.round(col * 255.0), 0, 255).astype(np.uint8)
    write_pnm(d / f"color_{index:06d}.ppm", col, maxval=255)
    write_pnm(d / f"mask_{index:06d}.pgm", np.where(np.asarray(mask), 255, 0).astype(np.uint8), maxval=255)


def write_meta(directory, intrinsics: CameraIntrinsics, frames: list[dict], extra: dict | None = None) -> None:
    meta = {
        "fx": intrinsics.fx,
        "fy": intrinsics.fy,
        "cx": intrinsics.cx,
        "cy": intrinsics.cy,
        "width": intrinsics.width,
        "height": intrinsics.height,
        "frames": frames,
    }
    if extra:
        meta.update(extra)
    path = Path(directory) / "meta.json"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    os.replace(tmp, path)


def pose_to_json(pose: RigidTransform) -> list:
    return [[float(x) for x in row] for row in pose.matrix()]


class FrameDirectory:
    """Lazy reader over a frame directory."""

    def __init__(self, directory):
        self.path = Path(directory)
        meta_path = self.path / "meta.json"
        if not meta_path.is_file():
            raise DatasetError(f"missing {meta_path}")
        try:
            with open(meta_path, encoding="utf-8") as fh:
                self.meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{meta_path}: invalid JSON ({exc})") from exc
        try:
            m = self.meta
            self.intrinsics = CameraIntrinsics(
                float(m["fx"]), float(m["fy"]), float(m["cx"]), float(m["cy"]), int(m["width"]), int(m["height"])
            )
            self.entries = sorted(m.get("frames", []), key=lambda e: int(e["index"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{meta_path}: bad field ({exc})") from exc
        if not self.entries:
            raise DatasetError(f"{meta_path}: no frames listed")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> list[int]:
        return [int(e["index"]) for e in self.entries]

    def gt_pose(self, position: int):
        raw = self.entries[position].get("gt_pose")
        return None if raw is None else RigidTransform.from_matrix(np.asarray(raw, dtype=np.float64))

    def has_gt(self) -> bool:
        return all(e.get("gt_pose") is not None for e in self.entries)

    def load(self, position: int) -> Frame:
        idx = int(self.entries[position]["index"])
        names = (f"depth_{idx:06d}.pgm", f"color_{idx:06d}.ppm", f"mask_{idx:06d}.pgm")
        for name in names:
            if not (self.path / name).is_file():
                raise DatasetError(f"missing {self.path / name}")
        depth = read_pnm(self.path / names[0]).astype(np.float64) / 1000.0
        color = read_pnm(self.path / names[1])
        mask = read_pnm(self.path / names[2]) > 127
        return Frame(depth, color, mask, self.intrinsics, idx, self.gt_pose(position))

    def __iter__(self):
        for i in range(len(self)):
            yield self.load(i)

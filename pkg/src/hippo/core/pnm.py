"""Binary PGM (P5) and PPM (P6) images; 16-bit samples are big-endian."""

from __future__ import annotations

import os

import numpy as np


class PnmError(ValueError):
    pass


def _header_tokens(data: bytes, n: int):
    tokens, i = [], 0
    while len(tokens) < n:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise PnmError("truncated PNM header")
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates header from raster
    return tokens, i + 1


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"{path}: unsupported PNM magic {magic!r}")
    (_, w, h, maxval), start = _header_tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    if len(data) - start < count * dtype.itemsize:
        raise PnmError(f"{path}: raster truncated")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=start)
    arr = arr.astype(np.uint16 if maxval > 255 else np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def write_pnm(path, image: np.ndarray, maxval: int | None = None) -> None:
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    elif img.ndim == 2:
        magic = b"P5"
    else:
        raise PnmError(f"cannot write image of shape {img.shape}")
    if maxval is None:
        maxval = 65535 if img.dtype == np.uint16 else 255
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = img.shape[:2]
    header = magic + f"\n{w} {h}\n{maxval}\n".encode("ascii")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img).astype(dtype).tobytes())
    os.replace(tmp, path)

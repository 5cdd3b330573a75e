"""PLY reading and writing (ascii, binary little- and big-endian).

Vertices are written as float32 x,y,z, uchar red,green,blue and optional
float32 nx,ny,nz; faces as ``property list uchar int vertex_indices``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .types import ColoredPointCloud, TriangleMesh

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_TOKEN = re.compile(rb"\S+")


class PlyError(ValueError):
    """Malformed PLY data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class _Property:
    name: str
    dtype: str
    count_dtype: Optional[str] = None  # set for list properties


@dataclass
class _Element:
    name: str
    count: int
    properties: list = field(default_factory=list)


@dataclass
class PlyData:
    vertices: np.ndarray
    colors: Optional[np.ndarray]
    normals: Optional[np.ndarray]
    faces: np.ndarray


def _parse_header(data: bytes):
    end_marker = b"end_header"
    pos = data.find(end_marker)
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    if pos < 0:
        raise PlyError("missing end_header", len(data))
    nl = data.find(b"\n", pos)
    if nl < 0:
        raise PlyError("header not terminated by newline", len(data))
    body_start = nl + 1
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for raw in data[:body_start].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        line_offset = offset
        offset += len(raw) + 1
        if not line or line == "ply" or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PlyError(f"unsupported format line '{line}'", line_offset)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].lstrip("-").isdigit() or int(parts[2]) < 0:
                raise PlyError(f"bad element line '{line}'", line_offset)
            elements.append(_Element(parts[1], int(parts[2])))
        elif parts[0] == "property":
            if not elements:
                raise PlyError("property before any element", line_offset)
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _TYPES or parts[3] not in _TYPES:
                    raise PlyError(f"bad list property '{line}'", line_offset)
                elements[-1].properties.append(_Property(parts[4], _TYPES[parts[3]], _TYPES[parts[2]]))
            else:
                if len(parts) != 3 or parts[1] not in _TYPES:
                    raise PlyError(f"bad property '{line}'", line_offset)
                elements[-1].properties.append(_Property(parts[2], _TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError(f"unknown header keyword '{parts[0]}'", line_offset)
    if fmt is None:
        raise PlyError("missing format line", 0)
    return fmt, elements, body_start


def _read_ascii(data: bytes, elements, start: int) -> dict:
    # tokens with their byte offsets so errors can point at the culprit
    tokens, offsets = [], []
    for m in _TOKEN.finditer(data, start):
        tokens.append(m.group())
        offsets.append(m.start())
    cursor = 0
    out = {}

    def take(kind: str):
        nonlocal cursor
        if cursor >= len(tokens):
            raise PlyError("unexpected end of ascii data", len(data))
        tok, off = tokens[cursor], offsets[cursor]
        cursor += 1
        try:
            return float(tok) if kind.startswith("f") else int(tok)
        except ValueError:
            raise PlyError(f"cannot parse {tok!r} as {kind}", off) from None

    for el in elements:
        cols = {p.name: [] for p in el.properties}
        for _ in range(el.count):
            for p in el.properties:
                if p.count_dtype is not None:
                    cnt = take(p.count_dtype)
                    cols[p.name].append([take(p.dtype) for _ in range(int(cnt))])
                else:
                    cols[p.name].append(take(p.dtype))
        out[el.name] = cols
    return out


def _read_binary(data: bytes, elements, start: int, endian: str) -> dict:
    pos = start
    out = {}
    for el in elements:
        if all(p.count_dtype is None for p in el.properties):
            dt = np.dtype([(p.name, endian + p.dtype) for p in el.properties])
            need = dt.itemsize * el.count
            if pos + need > len(data):
                raise PlyError(
                    f"element '{el.name}' needs {need} bytes, only {len(data) - pos} remain", len(data)
                )
            arr = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            out[el.name] = {p.name: arr[p.name] for p in el.properties}
            pos += need
            continue
        # list-bearing element: fast path for pure triangle lists, else per-row
        if len(el.properties) == 1:
            p = el.properties[0]
            dt = np.dtype([("n", endian + p.count_dtype), ("v", endian + p.dtype, (3,))])
            need = dt.itemsize * el.count
            if pos + need <= len(data):
                arr = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
                if np.all(arr["n"] == 3):
                    out[el.name] = {p.name: arr["v"]}
                    pos += need
                    continue
        cols = {p.name: [] for p in el.properties}
        for _ in range(el.count):
            for p in el.properties:
                if p.count_dtype is not None:
                    cdt = np.dtype(endian + p.count_dtype)
                    if pos + cdt.itemsize > len(data):
                        raise PlyError(f"truncated list count in '{el.name}'", pos)
                    cnt = int(np.frombuffer(data, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    vdt = np.dtype(endian + p.dtype)
                    if pos + vdt.itemsize * cnt > len(data):
                        raise PlyError(f"truncated list in '{el.name}'", pos)
                    cols[p.name].append(np.frombuffer(data, vdt, cnt, pos).tolist())
                    pos += vdt.itemsize * cnt
                else:
                    vdt = np.dtype(endian + p.dtype)
                    if pos + vdt.itemsize > len(data):
                        raise PlyError(f"truncated property '{p.name}'", pos)
                    cols[p.name].append(np.frombuffer(data, vdt, 1, pos)[0])
                    pos += vdt.itemsize
        out[el.name] = cols
    return out


def parse_ply(data: bytes) -> PlyData:
    fmt, elements, start = _parse_header(data)
    if fmt == "ascii":
        cols = _read_ascii(data, elements, start)
    else:
        cols = _read_binary(data, elements, start, "<" if fmt == "binary_little_endian" else ">")
    if "vertex" not in cols:
        raise PlyError("no vertex element", 0)
    v = cols["vertex"]
    for axis in "xyz":
        if axis not in v:
            raise PlyError(f"vertex element lacks '{axis}'", 0)
    verts = np.stack([np.asarray(v[a], dtype=np.float64) for a in "xyz"], axis=1).reshape(-1, 3)
    colors = None
    if all(c in v for c in ("red", "green", "blue")):
        raw = np.stack([np.asarray(v[c], dtype=np.float64) for c in ("red", "green", "blue")], axis=1)
        vert_el = next(e for e in elements if e.name == "vertex")
        red = next(p for p in vert_el.properties if p.name == "red")
        colors = raw if red.dtype.startswith("f") else raw / 255.0
    normals = None
    if all(c in v for c in ("nx", "ny", "nz")):
        normals = np.stack([np.asarray(v[c], dtype=np.float64) for c in ("nx", "ny", "nz")], axis=1)
    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in cols:
        f = cols["face"]
        key = "vertex_indices" if "vertex_indices" in f else ("vertex_index" if "vertex_index" in f else None)
        if key is None:
            raise PlyError("face element lacks vertex_indices", 0)
        lists = f[key]
        if isinstance(lists, np.ndarray):
            faces = lists.astype(np.int64).reshape(-1, 3)
        else:
            tris = []
            for poly in lists:
                if len(poly) < 3:
                    raise PlyError("face with fewer than 3 vertices", 0)
                tris.extend([poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1))
            faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
            raise PlyError("face index out of range", 0)
    return PlyData(verts, colors, normals, faces)


def read_ply(path) -> PlyData:
    with open(path, "rb") as fh:
        return parse_ply(fh.read())


def read_mesh(path) -> TriangleMesh:
    d = read_ply(path)
    return TriangleMesh(d.vertices, d.faces, d.colors)


def read_cloud(path) -> ColoredPointCloud:
    d = read_ply(path)
    normals = d.normals
    if normals is not None:
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norm > 0, norm, 1.0)
    return ColoredPointCloud(d.vertices, d.colors, normals)


def _to_u8(colors: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)


def write_ply(path, vertices, colors=None, normals=None, faces=None, binary: bool = True) -> None:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    n = len(vertices)
    colors = np.full((n, 3), 0.7) if colors is None else np.asarray(colors)
    faces = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
    header += ["property uchar red", "property uchar green", "property uchar blue"]
    if len(faces):
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    rgb = _to_u8(colors)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = vertices.T
    if normals is not None:
        nrm = np.asarray(normals)
        rec["nx"], rec["ny"], rec["nz"] = nrm.T
    rec["red"], rec["green"], rec["blue"] = rgb.T
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(head)
        if binary:
            fh.write(rec.tobytes())
            if len(faces):
                frec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                frec["n"] = 3
                frec["v"] = faces
                fh.write(frec.tobytes())
        else:
            lines = []
            for r in rec:
                vals = [repr(float(r[name])) if name not in ("red", "green", "blue") else str(int(r[name]))
                        for name, _ in fields]
                lines.append(" ".join(vals))
            lines.extend(f"3 {a} {b} {c}" for a, b, c in faces)
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
    os.replace(tmp, path)


def write_mesh(path, mesh: TriangleMesh, binary: bool = True) -> None:
    write_ply(path, mesh.vertices, mesh.vertex_colors, None, mesh.faces, binary)


def write_cloud(path, cloud: ColoredPointCloud, binary: bool = True) -> None:
    write_ply(path, cloud.positions, cloud.colors, cloud.normals, None, binary)

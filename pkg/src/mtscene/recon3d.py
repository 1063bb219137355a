"""Pinhole back-projection of depth maps into coloured point clouds, and PLY IO.

A pixel ``(u, v)`` with metric depth ``z`` maps to
``x = (u - cx) z / fx``, ``y = (v - cy) z / fy``.  Points are in millimetres.

PLY grammar written here (``<fmt>`` is ``ascii`` or ``binary_little_endian``)::

    ply
    format <fmt> 1.0
    comment mtscene point cloud
    element vertex <N>
    property float x
    property float y
    property float z
    property uchar red
    property uchar green
    property uchar blue
    [property uchar label]
    end_header

followed by ``N`` vertex records (ascii: one whitespace-separated line each;
binary: packed little-endian, no padding).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def default(cls, width: int, height: int) -> "Intrinsics":
        return cls(0.8 * width, 0.8 * width, width / 2.0, height / 2.0)

    def check_image(self, width: int, height: int) -> None:
        if not (0 <= self.cx <= width and 0 <= self.cy <= height):
            raise DataError(f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float, millimetres
    colors: np.ndarray  # (N, 3) uint8
    labels: Optional[np.ndarray] = None  # (N,) uint8
    pixels: Optional[np.ndarray] = None  # (N, 2) source (u, v), not serialised

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.colors) != len(self.points):
            raise ShapeError(f"{len(self.points)} points but {len(self.colors)} colours")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
            if len(self.labels) != len(self.points):
                raise ShapeError(f"{len(self.points)} points but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.points)


def backproject(
    depth: np.ndarray,
    rgb: np.ndarray,
    k: Intrinsics,
    scale_mm: float,
    mask: Optional[np.ndarray] = None,
    z_floor_mm: float = 1e-3,
) -> PointCloud:
    """Lift every pixel whose metric depth exceeds ``z_floor_mm`` to 3D."""
    depth = np.asarray(depth, dtype=np.float64)
    rgb = np.asarray(rgb)
    if depth.ndim != 2:
        raise ShapeError(f"depth must be (H, W), got {depth.shape}")
    if rgb.shape[:2] != depth.shape or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"rgb {rgb.shape} does not match depth {depth.shape}")
    if mask is not None and np.shape(mask) != depth.shape:
        raise ShapeError(f"mask {np.shape(mask)} does not match depth {depth.shape}")
    if not scale_mm > 0:
        raise DataError("scale_mm must be positive")
    z = depth * scale_mm
    v, u = np.nonzero(z > z_floor_mm)
    zz = z[v, u]
    points = np.stack([(u - k.cx) * zz / k.fx, (v - k.cy) * zz / k.fy, zz], axis=1)
    colors = rgb[v, u].astype(np.uint8)
    labels = None if mask is None else np.asarray(mask)[v, u].astype(np.uint8)
    return PointCloud(points, colors, labels, np.stack([u, v], axis=1))


def reproject(cloud: PointCloud, k: Intrinsics, extents: Tuple[int, int]) -> np.ndarray:
    """Rasterise points to an (H, W) metric depth map keeping the nearest z; NaN where empty."""
    H, W = extents
    out = np.full((H, W), np.inf)
    if len(cloud):
        x, y, z = cloud.points.T
        front = z > 0
        u = np.rint(k.fx * x[front] / z[front] + k.cx).astype(np.int64)
        v = np.rint(k.fy * y[front] / z[front] + k.cy).astype(np.int64)
        inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
        np.minimum.at(out, (v[inside], u[inside]), z[front][inside])
    out[np.isinf(out)] = np.nan
    return out


# ---------------------------------------------------------------------------
# PLY

_FORMATS = {"ascii": "ascii", "binary": "binary_little_endian", "binary_little_endian": "binary_little_endian"}


def _vertex_dtype(with_labels: bool) -> np.dtype:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if with_labels:
        fields.append(("label", "u1"))
    return np.dtype(fields)


def write_ply(cloud: PointCloud, path, fmt: str = "binary_little_endian") -> None:
    if fmt not in _FORMATS:
        raise ValueError(f"unknown PLY format {fmt!r}")
    fmt = _FORMATS[fmt]
    with_labels = cloud.labels is not None
    lines = [
        "ply",
        f"format {fmt} 1.0",
        "comment mtscene point cloud",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if with_labels:
        lines.append("property uchar label")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    records = np.zeros(len(cloud), dtype=_vertex_dtype(with_labels))
    for i, axis in enumerate("xyz"):
        records[axis] = cloud.points[:, i]
    for i, ch in enumerate(("red", "green", "blue")):
        records[ch] = cloud.colors[:, i]
    if with_labels:
        records["label"] = cloud.labels
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            if fmt == "ascii":
                for r in records:
                    vals = [repr(float(r[n])) if n in "xyz" else str(int(r[n])) for n in records.dtype.names]
                    fh.write((" ".join(vals) + "\n").encode("ascii"))
            else:
                fh.write(records.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write PLY to {os.fspath(path)}: {exc}") from exc


def read_ply(path) -> PointCloud:
    """Strict reader for the files produced by :func:`write_ply`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n") :]
    fmt, count, props = None, None, []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[2] != "1.0" or parts[1] not in ("ascii", "binary_little_endian"):
                raise DataError(f"{path}: unsupported format line {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] != "vertex" or count is not None:
                raise DataError(f"{path}: unexpected element line {line!r}")
            count = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
        else:
            raise DataError(f"{path}: unexpected header line {line!r}")
    base = [("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")]
    with_labels = props == base + [("uchar", "label")]
    if fmt is None or count is None or (props != base and not with_labels):
        raise DataError(f"{path}: header does not match the point-cloud schema")
    dtype = _vertex_dtype(with_labels)
    if fmt == "binary_little_endian":
        if len(body) != count * dtype.itemsize:
            raise DataError(f"{path}: expected {count * dtype.itemsize} payload bytes, found {len(body)}")
        records = np.frombuffer(body, dtype=dtype, count=count)
    else:
        rows = body.decode("ascii").split("\n")
        if rows and rows[-1] == "":
            rows.pop()
        if len(rows) != count:
            raise DataError(f"{path}: expected {count} vertex lines, found {len(rows)}")
        records = np.zeros(count, dtype=dtype)
        for i, row in enumerate(rows):
            vals = row.split()
            if len(vals) != len(dtype.names):
                raise DataError(f"{path}: malformed vertex line {i}")
            for name, val in zip(dtype.names, vals):
                records[name][i] = float(val) if name in "xyz" else int(val)
    points = np.stack([records["x"], records["y"], records["z"]], axis=1).astype(np.float64)
    colors = np.stack([records["red"], records["green"], records["blue"]], axis=1)
    labels = records["label"].copy() if with_labels else None
    return PointCloud(points, colors, labels)

"""Binary little-endian PLY point export/import (x, y, z as float32)."""

from __future__ import annotations

import numpy as np

__all__ = ["write_points_ply", "read_points_ply"]

_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
end_header
"""


def write_points_ply(path, points) -> int:
    """Write an (N, 3) array of positions; returns bytes written."""
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    header = _HEADER.format(count=pts.shape[0]).encode("ascii")
    payload = pts.tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)


def read_points_ply(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    marker = b"end_header\n"
    idx = data.find(marker)
    if idx < 0 or not data.startswith(b"ply"):
        raise ValueError("not a PLY file")
    header = data[:idx].decode("ascii")
    count = None
    for line in header.splitlines():
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
    if count is None:
        raise ValueError("PLY header lacks a vertex element")
    if "binary_little_endian" not in header:
        raise ValueError("only binary little-endian PLY is supported")
    body = data[idx + len(marker):]
    pts = np.frombuffer(body, dtype="<f4", count=count * 3)
    return pts.reshape(count, 3).astype(np.float64)

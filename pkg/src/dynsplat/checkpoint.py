"""Versioned binary checkpoint container.

Little-endian throughout: magic ``MDGS``, a u32 version, then length-prefixed
named blocks. Each block is a float64/int64 tensor or raw bytes (used for the
JSON metadata). Byte sizes of individual blocks are exposed so storage
accounting can be cross-checked against the file.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["write_container", "read_container", "block_sizes", "MAGIC", "VERSION"]

MAGIC = b"MDGS"
VERSION = 1

_KIND_F64 = 0
_KIND_I64 = 1
_KIND_BYTES = 2


def _encode_block(name: str, payload) -> bytes:
    name_b = name.encode("utf-8")
    if isinstance(payload, (bytes, bytearray)):
        kind, dims, body = _KIND_BYTES, (), bytes(payload)
    else:
        arr = np.asarray(payload)
        if arr.dtype.kind in "ui":
            arr = arr.astype("<i8")
            kind = _KIND_I64
        else:
            arr = arr.astype("<f8")
            kind = _KIND_F64
        dims = arr.shape
        body = np.ascontiguousarray(arr).tobytes()
    head = struct.pack("<I", len(name_b)) + name_b
    head += struct.pack("<BI", kind, len(dims))
    head += struct.pack(f"<{len(dims)}Q", *dims) if dims else b""
    head += struct.pack("<Q", len(body))
    return head + body


def write_container(path, blocks: dict) -> dict[str, int]:
    """Write named blocks; returns the on-disk byte size of each block record."""
    sizes = {}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blocks)))
        for name, payload in blocks.items():
            rec = _encode_block(name, payload)
            sizes[name] = len(rec)
            fh.write(rec)
    return sizes


def read_container(path) -> tuple[dict, dict[str, int]]:
    """Read back (blocks, per-block byte sizes)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint container (bad magic)")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    n_blocks = struct.unpack_from("<I", data, 8)[0]
    offset = 12
    blocks, sizes = {}, {}
    for _ in range(n_blocks):
        start = offset
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset: offset + name_len].decode("utf-8")
        offset += name_len
        kind, ndim = struct.unpack_from("<BI", data, offset)
        offset += 5
        dims = struct.unpack_from(f"<{ndim}Q", data, offset) if ndim else ()
        offset += 8 * ndim
        (payload_len,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        body = data[offset: offset + payload_len]
        offset += payload_len
        if kind == _KIND_BYTES:
            blocks[name] = bytes(body)
        elif kind == _KIND_I64:
            blocks[name] = np.frombuffer(body, dtype="<i8").reshape(dims).copy()
        elif kind == _KIND_F64:
            blocks[name] = np.frombuffer(body, dtype="<f8").reshape(dims).copy()
        else:
            raise ValueError(f"unknown block kind {kind}")
        sizes[name] = offset - start
    return blocks, sizes


def block_sizes(path) -> dict[str, int]:
    return read_container(path)[1]

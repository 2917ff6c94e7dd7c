"""Flat binary parameter checkpoints.

Layout (little-endian)::

    b"RGLCKPT\\0"  u32 version  u32 header_len  header (utf-8 "key=value" lines)
    u32 n_records
    per record: u32 name_len, name, u32 ndim, u64 dims[ndim], f64 values (row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"RGLCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], header: Mapping[str, str] | None = None) -> None:
    header = header or {}
    head = "".join(f"{k}={v}\n" for k, v in header.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    header = {}
    for line in buf[off : off + hlen].decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            header[k] = v
    off += hlen
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + nl].decode("utf-8")
        off += nl
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    return header, params

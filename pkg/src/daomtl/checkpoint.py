"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"DAO1" | version | meta_len | meta (UTF-8 JSON) | n_tensors |
    n_tensors x ( name_len | name (UTF-8) | ndim | dims... | float64 LE values )

The JSON meta block carries the config echo, counters, optimizer
hyper-state, the DAO snapshot and the random-stream states.  Tensor names are
prefixed ``model/`` for parameters and ``adam/m/`` / ``adam/v/`` for the
model optimizer moments.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DAO1"
VERSION = 1
_U32 = struct.Struct("<I")


def write_checkpoint(path, meta: dict, tensors: dict):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(_U32.pack(len(blob)))
    buf.write(blob)
    buf.write(_U32.pack(len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        buf.write(_U32.pack(len(raw)))
        buf.write(raw)
        buf.write(_U32.pack(arr.ndim))
        for d in arr.shape:
            buf.write(_U32.pack(d))
        buf.write(arr.tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_checkpoint(path):
    """Return ``(meta, tensors)``; raises FormatError on any structural problem."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError("checkpoint truncated")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return _U32.unpack(take(4))[0]

    if take(4) != MAGIC:
        raise FormatError("not a DAO1 checkpoint (bad magic)")
    version = u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(take(u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from exc
    tensors = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint tensors")
    return meta, tensors

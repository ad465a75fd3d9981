"""Single-file binary checkpoints.

Layout (little-endian)::

    magic   4 bytes  b"RLA1"
    version u32
    stage   u8
    iter    u64
    count   u32
    count × record:
        name_len u32, name (utf-8)
        dtype    u8   (0 = float64, 1 = uint8)
        ndim     u32, dims u64 × ndim
        raw data

JSON metadata (configs, RNG state) travels as a uint8 record named ``meta``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

MAGIC = b"RLA1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}
_CODES = {np.dtype("<f8"): 0, np.dtype("u1"): 1}


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    stage: int = 0
    iteration: int = 0
    meta: dict = field(default_factory=dict)

    def prefixed(self, prefix):
        """Tensors whose names start with ``prefix.``, with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def save_checkpoint(path, ckpt):
    records = dict(ckpt.tensors)
    records["meta"] = np.frombuffer(json.dumps(ckpt.meta, sort_keys=True).encode(), dtype="u1")
    parts = [MAGIC, struct.pack("<IBQI", VERSION, int(ckpt.stage), int(ckpt.iteration),
                                len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        arr = arr.astype("u1") if arr.dtype == np.uint8 else arr.astype("<f8")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<BI", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise ConfigError(f"{path}: not an RLA checkpoint")
    version, stage, iteration, count = struct.unpack_from("<IBQI", buf, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    pos = 4 + struct.calcsize("<IBQI")
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode()
        pos += n
        code, ndim = struct.unpack_from("<BI", buf, pos)
        pos += struct.calcsize("<BI")
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(buf, dtype=dt, count=size // dt.itemsize,
                                      offset=pos).reshape(shape).copy()
        pos += size
    meta = json.loads(tensors.pop("meta").tobytes().decode()) if "meta" in tensors else {}
    return Checkpoint(tensors, stage, iteration, meta)

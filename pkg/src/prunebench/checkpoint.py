"""Binary tensor checkpoints.

Layout: 8-byte magic, u32 format version, then one record per tensor until
EOF: u32 name length, UTF-8 name, u32 rank, rank x i64 shape, raw float32
data. All integers and reals are little-endian.
"""
from __future__ import annotations

import hashlib
import os
import struct
from typing import Dict

import numpy as np

MAGIC = b"PRBCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, t in tensors.items():
        raw = name.encode()
        arr = np.ascontiguousarray(t, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", buf, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 4
    out = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", buf, pos)
            shape = struct.unpack_from(f"<{rank}q", buf, pos + 4)
            pos += 4 + 8 * rank
            size = 4 * int(np.prod(shape))
            if pos + size > len(buf):
                raise CheckpointError(f"tensor {name!r} truncated at byte {pos}")
            out[name] = np.frombuffer(buf, "<f4", int(np.prod(shape)), pos).reshape(shape).astype(np.float32)
            pos += size
    except struct.error as e:
        raise CheckpointError(f"corrupt checkpoint near byte {pos}: {e}") from None
    return out


def save(path, tensors: Dict[str, np.ndarray]) -> str:
    """Write atomically; returns the sha256 of the file bytes."""
    buf = dumps(tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(buf)
    os.replace(tmp, path)
    return hashlib.sha256(buf).hexdigest()


def load(path, expect_hash=None) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if expect_hash is not None:
        got = hashlib.sha256(buf).hexdigest()
        if got != expect_hash:
            raise CheckpointError(f"{path}: content hash {got[:12]} does not match "
                                  f"expected {expect_hash[:12]}")
    return loads(buf)


def content_hash(tensors: Dict[str, np.ndarray]) -> str:
    return hashlib.sha256(dumps(tensors)).hexdigest()

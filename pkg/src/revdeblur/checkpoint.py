"""Binary checkpoint container for named tensors.

Layout (all integers little-endian)::

    magic  b"RVDCKPT\\0"      8 bytes
    version                   u16
    count                     u32
    count x entry:
        name_len              u16
        name                  UTF-8
        dtype                 u8   (see DTYPES)
        rank                  u8
        dims                  rank x u64
        payload               little-endian, C order
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"RVDCKPT\0"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAGS = {(v.kind, v.itemsize): k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = _TAGS.get((arr.dtype.kind, arr.dtype.itemsize))
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    try:
        return _loads(blob)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def _loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic bytes")
    version, count = struct.unpack_from("<HI", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 14
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        tag, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        if tag not in DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag}")
        dt = DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + size > len(blob):
            raise CheckpointError(f"truncated payload for {name!r}")
        tensors[name] = np.frombuffer(blob, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(dims).copy()
        pos += size
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors


def save(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

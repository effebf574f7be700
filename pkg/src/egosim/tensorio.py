"""Binary tensor containers.

Two formats, both little-endian:

Tensor file (``.egt``)::

    magic   4 bytes  b"EGT1"
    version u8       1
    ndim    u8
    dims    ndim x u64
    payload float32, row-major

Checkpoint file (``.egc``) -- named tensors plus a JSON metadata block::

    magic    4 bytes  b"EGC1"
    version  u8       1
    meta_len u32
    meta     UTF-8 JSON (config snapshot, channel offsets, ...)
    count    u32
    entries  count x [name_len u16 | name UTF-8 | ndim u8 | dims u64... | payload f32]

Entries are written in sorted-name order so identical weights always produce
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

TENSOR_MAGIC = b"EGT1"
CKPT_MAGIC = b"EGC1"
_VERSION = 1


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<BB", _VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 6 or raw[:4] != TENSOR_MAGIC:
        raise ParseError(f"{path}: not a tensor container (bad magic)")
    version, ndim = struct.unpack_from("<BB", raw, 4)
    if version != _VERSION:
        raise ParseError(f"{path}: unsupported tensor container version {version}")
    off = 6
    if len(raw) < off + 8 * ndim:
        raise ParseError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    count = int(np.prod(dims)) if ndim else 1
    expected = off + 4 * count
    if len(raw) != expected:
        raise ParseError(f"{path}: payload size {len(raw) - off} != expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    return data.reshape(dims).astype(np.float32)


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<B", _VERSION))
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
            blob = name.encode("utf-8")
            f.write(struct.pack("<H", len(blob)))
            f.write(blob)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes(order="C"))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 9 or raw[:4] != CKPT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint container (bad magic)")
    version = raw[4]
    if version != _VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, 5)
    off = 9
    try:
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"{path}: bad metadata block: {e}") from e
    off += meta_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            ndim = raw[off]
            off += 1
            dims = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
            off += 4 * n
        except (struct.error, IndexError) as e:
            raise ParseError(f"{path}: truncated checkpoint at entry {i}: {e}") from e
        tensors[name] = data.reshape(dims).astype(np.float32)
    return tensors, meta

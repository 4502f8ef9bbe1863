"""Binary checkpoint container for named float64 arrays.

Layout (all integers little-endian unsigned, array data little-endian
float64 in C order):

    magic   8 bytes  b"MNCKPT01"
    count   u32      number of entries
    entry*  u16 name length, name (UTF-8), u8 rank, rank * u32 dims, data
    check   u64      FNV-1a over every preceding byte

Entry order is preserved exactly, so writing the same mapping twice yields
byte-identical files.
"""
from __future__ import annotations

import struct
from typing import Dict

import numpy as np

MAGIC = b"MNCKPT01"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class CheckpointError(ValueError):
    """Malformed, truncated, or corrupted checkpoint file."""


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"entry name too long ({len(nb)} bytes)")
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim > 0xFF:
            raise CheckpointError(f"entry {name}: rank {a.ndim} exceeds format limit")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<Q", fnv1a64(body)))


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 4 + 8:
        raise CheckpointError(f"file too short ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:len(MAGIC)]!r}")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    actual = fnv1a64(body)
    if actual != stored:
        raise CheckpointError(f"checksum mismatch: stored {stored:#018x}, computed {actual:#018x}")

    off = len(MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise CheckpointError(f"truncated while reading {what} at offset {off}")
        chunk = body[off : off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "entry count"))
    out: Dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(nlen, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"entry {i} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"entry {i} dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = take(8 * n, f"entry {i} data")
        out[name] = np.frombuffer(data, dtype="<f8").reshape(dims).astype(np.float64)
    if off != len(body):
        raise CheckpointError(f"{len(body) - off} trailing bytes after last entry")
    return out

"""Binary container for checkpoints and dataset caches.

Layout (little-endian)::

    b"MD4S" | u32 version | u32 header_len | header (UTF-8 JSON)
    | u32 n_tensors | per tensor: u32 name_len, name, u32 rank, u32 dims..., f32 data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"MD4S"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass
class Checkpoint:
    header: dict
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.header.get("step", 0))

    @property
    def config(self) -> dict:
        return self.header.get("config", {})


def dumps(ckpt: Checkpoint) -> bytes:
    head = json.dumps(ckpt.header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        data = arr.astype("<f4")
        if not np.array_equal(data.astype(arr.dtype), arr):
            raise ValueError(f"tensor {name!r} is not exactly representable as float32")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(data.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def loads(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic", 0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {version}", 4)
    hlen = r.u32("header length")
    at = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed header ({exc})", at) from None
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        dims = tuple(r.u32(f"dims of {name}") for _ in range(rank))
        n = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * n, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes", r.pos)
    return Checkpoint(header, tensors)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_bytes())

"""Binary model container shared by estimators and policy snapshots.

Layout, all little-endian:

    magic   4 bytes  b"TSCP"
    u32     format version (currently 1)
    u32     architecture id
    u32     metadata length, followed by that many bytes of UTF-8 JSON
    u32     tensor count
    per tensor:
        u16  name length, followed by the UTF-8 name
        u8   rank, then u32 per dimension
        u64  byte offset into the data section
    u64     data section length, followed by the raw float32 data
    8 x f64 normalizer block (input mean[3], input std[3], target mean, std)

Tensors are stored as contiguous float32 in C order, so a write/read
round trip is bit exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from tendonsim.errors import CheckpointError

MAGIC = b"TSCP"
FORMAT_VERSION = 1

ARCH_IDS = {"mlp": 1, "rnn": 2, "transformer": 3, "policy": 4}
ARCH_NAMES = {v: k for k, v in ARCH_IDS.items()}

NORMALIZER_LEN = 8


def write_checkpoint(path, arch: str, tensors: dict, normalizer_block,
                     meta: dict | None = None):
    """Serialize tensors atomically; see module docstring for the layout."""
    if arch not in ARCH_IDS:
        raise CheckpointError(f"unknown architecture {arch!r}")
    block = np.asarray(normalizer_block, np.float64)
    if block.shape != (NORMALIZER_LEN,):
        raise CheckpointError(
            f"normalizer block must have {NORMALIZER_LEN} entries, got {block.shape}")

    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, ARCH_IDS[arch]),
             struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]

    data_chunks, offset = [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        raw = arr.tobytes()
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(struct.pack("<Q", offset))
        data_chunks.append(raw)
        offset += len(raw)

    parts.append(struct.pack("<Q", offset))
    parts.extend(data_chunks)
    parts.append(block.tobytes())

    payload = b"".join(parts)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint {self.path}")
        out = self.blob[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Returns ``(arch, tensors, normalizer_block, meta)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)

    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
    version, arch_id = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    if arch_id not in ARCH_NAMES:
        raise CheckpointError(f"unknown architecture id {arch_id} in {path}")

    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata in {path}: {exc}") from exc

    (n_tensors,) = r.unpack("<I")
    entries = []
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (offset,) = r.unpack("<Q")
        entries.append((name, shape, offset))

    (data_len,) = r.unpack("<Q")
    data = r.take(data_len)
    block = np.frombuffer(r.take(NORMALIZER_LEN * 8), dtype="<f8").copy()
    if r.pos != len(blob):
        raise CheckpointError(f"{path} has {len(blob) - r.pos} trailing bytes")

    tensors = {}
    for name, shape, offset in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > data_len:
            raise CheckpointError(
                f"tensor {name} in {path} overruns the data section")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    return ARCH_NAMES[arch_id], tensors, block, meta

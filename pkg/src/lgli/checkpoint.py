"""Binary checkpoint files: magic, version, JSON config, named parameter table.

Layout (all integers little-endian):
  8 bytes   magic  b"LGLICKPT"
  uint32    format version (currently 1)
  uint64    config length, then UTF-8 JSON config
  uint32    parameter count, then per parameter:
              uint16 name length + UTF-8 name
              uint8 ndim, ndim * uint32 dims
              float64 payload, row-major, little-endian
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"LGLICKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


def save_checkpoint(path, params: dict, config: dict) -> None:
    """Atomic write; parameter order is sorted by name for reproducible bytes."""
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    payload += struct.pack("<Q", len(cfg))
    payload += cfg
    names = sorted(params)
    payload += struct.pack("<I", len(names))
    for name in names:
        tensor = params[name]
        arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
        nb = name.encode("utf-8")
        payload += struct.pack("<H", len(nb))
        payload += nb
        payload += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            payload += struct.pack("<I", d)
        payload += arr.astype("<f8").tobytes(order="C")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CorruptCheckpointError(f"{self.path}: truncated at byte {self.off}")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple:
    """Returns (params: dict[str, Tensor], config: dict); never partial state."""
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")
    (cfg_len,) = r.unpack("<Q")
    try:
        config = json.loads(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable config block: {exc}") from exc
    (count,) = r.unpack("<I")
    params: dict = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = [r.unpack("<I")[0] for _ in range(ndim)]
        n_items = int(np.prod(dims)) if dims else 1
        raw = r.take(n_items * 8)
        arr = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        params[name] = Tensor(arr)
    if r.off != len(blob):
        raise CorruptCheckpointError(f"{path}: {len(blob) - r.off} trailing bytes")
    return params, config

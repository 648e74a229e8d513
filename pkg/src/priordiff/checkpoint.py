"""Binary checkpoint format.

Layout (all integers little-endian):
  magic            4 bytes  b"IPRD"
  version          u32      currently 1
  schedule block   u32 T, then T float64 betas
  config block     u32 byte length, then UTF-8 "key = value" lines
  parameter table  u32 count, then per entry:
                     u32 id length, id bytes (UTF-8),
                     u32 rank, u32 per dimension,
                     float64 values (row-major)
  crc              u32 CRC-32 of every preceding byte

Files are written to a temp path and atomically renamed, so a failed write
never leaves a partial checkpoint behind.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import CheckpointError
from .networks import ModelBundle
from .schedule import Schedule

MAGIC = b"IPRD"
VERSION = 1


def save_checkpoint(path, bundle: ModelBundle, schedule: Schedule, config_text: str) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", schedule.T)
    blob += np.asarray(schedule.betas, dtype="<f8").tobytes()
    cfg_bytes = config_text.encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    params = bundle.params()
    blob += struct.pack("<I", len(params))
    for p in params:
        pid = p.id.encode("utf-8")
        blob += struct.pack("<I", len(pid))
        blob += pid
        blob += struct.pack("<I", p.data.ndim)
        for dim in p.data.shape:
            blob += struct.pack("<I", dim)
        blob += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[Schedule, str, dict[str, np.ndarray]]:
    """Returns (schedule, config text, {param id: array}). Validates the CRC."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(data) < 12:
        raise CheckpointError("checkpoint truncated")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupt)")
    r = _Reader(data[:-4])
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic bytes; not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    t = r.u32()
    betas = np.frombuffer(r.take(8 * t), dtype="<f8").copy()
    cfg_len = r.u32()
    config_text = r.take(cfg_len).decode("utf-8")
    count = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        pid = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        n_vals = int(np.prod(shape)) if shape else 1
        params[pid] = np.frombuffer(r.take(8 * n_vals), dtype="<f8").copy().reshape(shape)
    if r.off != len(r.data):
        raise CheckpointError("trailing bytes after parameter table")
    return Schedule(betas), config_text, params


def load_params_into(bundle: ModelBundle, params: dict[str, np.ndarray]) -> None:
    """Copy saved arrays into a structure-matching bundle, bit-exactly."""
    own = {p.id: p for p in bundle.params()}
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}"
        )
    for pid, arr in params.items():
        p = own[pid]
        if p.data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {pid}: {p.data.shape} vs {arr.shape}")
        np.copyto(p.data, arr)

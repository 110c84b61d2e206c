"""Binary checkpoint format for model parameters.

Layout: magic b"ROBAD", version byte 1, 8-byte config hash, then per
tensor: u16 name length, UTF-8 name, u8 rank, rank u32 little-endian
dims, row-major float32 little-endian values. Values are stored in
32-bit; load reproduces every matrix within storage precision.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .tensor import Tensor

MAGIC = b"ROBAD"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class CheckpointMismatch(ValueError):
    """Checkpoint was written under a different model configuration."""


def config_hash(config):
    payload = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(payload).digest()[:8]


def save_checkpoint(params, config, path):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION]))
        f.write(config_hash(config))
        for name, p in params.items():
            enc = name.encode()
            arr = np.asarray(p.data, dtype="<f4")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path, config):
    """Read params back; rejects bad headers and config mismatches."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    if take(1, "version")[0] != VERSION:
        raise CheckpointError(f"{path}: unsupported version")
    if take(8, "config hash") != config_hash(config):
        raise CheckpointMismatch(f"{path}: checkpoint config does not match")
    params = {}
    while off < len(blob):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode()
        rank = take(1, "rank")[0]
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(shape)) if rank else 1
        raw = take(4 * count, "values")
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        params[name] = Tensor(data, requires_grad=True)
    return params

"""Versioned binary checkpoints.

Layout::

    8 bytes   magic  b"XLLMCKPT"
    u32 LE    format version
    u32 LE    header length N
    N bytes   UTF-8 JSON header {"kind", "config", "params": [[name, shape], ...]}
    ...       float64 little-endian payload, parameters in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointConfigError, CheckpointError

MAGIC = b"XLLMCKPT"
VERSION = 1


def save_checkpoint(path, module, kind: str, config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = list(module.named_parameters())
    header = {"kind": kind, "config": config, "params": [[n, list(p.shape)] for n, p in params]}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return path


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(header, {name: array})``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, n = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + n])
    offset = 16 + n
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path} is truncated")
        params[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path} has trailing bytes")
    return header, params


def load_checkpoint(path, module, kind: str, config: dict) -> dict:
    header, params = read_checkpoint(path)
    if header["kind"] != kind:
        raise CheckpointError(f"checkpoint holds {header['kind']!r}, expected {kind!r}")
    if header["config"] != json.loads(json.dumps(config, sort_keys=True)):
        raise CheckpointConfigError(f"checkpoint config {header['config']} does not match {config}")
    module.load_state_dict(params)
    return header

"""Versioned binary checkpoint files for parameter stores.

Layout: magic, 4-byte little-endian metadata length, canonical JSON metadata,
then for each parameter (sorted by name) a 2-byte name length, the UTF-8
name, 4-byte row and column counts, and the float64 little-endian payload.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

CHECKPOINT_MAGIC = b"HOICKPT1"


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> Path:
    """Write named float64 matrices plus a JSON metadata block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_bytes = (json.dumps(meta or {}, sort_keys=True) + "\n").encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(meta_bytes)), meta_bytes]
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype=np.float64)
        if data.ndim != 2:
            raise CheckpointError(f"parameter {name!r} must be 2-D, got shape {data.shape}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]!r}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<II", *data.shape))
        chunks.append(data.astype("<f8").tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (metadata, {name: float64 array}) written by save_checkpoint."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path.name}: not a checkpoint file (bad magic)")
    offset = len(CHECKPOINT_MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"{path.name}: truncated while reading {what}")
        piece = blob[offset:offset + n]
        offset += n
        return piece

    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    try:
        meta = json.loads(take(meta_len, "metadata").decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path.name}: corrupt metadata block: {exc}") from exc
    arrays = {}
    while offset < len(blob):
        (name_len,) = struct.unpack("<H", take(2, "parameter name length"))
        name = take(name_len, "parameter name").decode("utf-8")
        rows, cols = struct.unpack("<II", take(8, f"shape of {name!r}"))
        payload = take(8 * rows * cols, f"data of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    return meta, arrays

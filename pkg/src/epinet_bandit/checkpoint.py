"""Flat binary checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header, then the named float64 tensors concatenated little-endian in
header order. The header carries tensor names/shapes plus a free-form
``meta`` dict (variant, prior_scale, index dim, rng states, ...). Loads
are all-or-nothing: any corruption raises before any state is handed out.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ENNCKPT1"
FORMAT_VERSION = 1

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "FORMAT_VERSION"]


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float64 tensors plus JSON metadata to ``path``."""
    names = list(tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for n in names:
            arr = np.ascontiguousarray(tensors[n], dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns ``(meta, tensors)``.

    Raises :class:`CheckpointError` on bad magic, unknown version, a
    malformed header, or a truncated payload.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    header_start = len(MAGIC) + 8
    header_end = header_start + header_len
    if header_end > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    tensors: dict[str, np.ndarray] = {}
    offset = header_end
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        end = offset + nbytes
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated payload at tensor {spec['name']!r}")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
        tensors[spec["name"]] = arr.astype(np.float64, copy=True)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return header["meta"], tensors

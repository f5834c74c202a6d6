"""Binary checkpoint container: JSON manifest + raw little-endian tensors.

Byte layout (version 1):

    offset 0   8 bytes   magic ``b"HRCKPT01"``
    offset 8   4 bytes   uint32 little-endian manifest length L
    offset 12  L bytes   UTF-8 canonical JSON manifest
    offset 12+L          tensor payloads, concatenated in manifest order

The manifest holds ``format_version``, ``seed``, ``config_hash``, a free-form
``extra`` dict, and a ``tensors`` list of ``{name, shape, dtype}`` records
(dtype is always ``"<f8"`` in v1). Canonical JSON (sorted keys, no spaces)
makes save(load(x)) byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"HRCKPT01"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, tensors: dict[str, np.ndarray], seed: int, config_hash: str, extra: dict | None = None):
    names = sorted(tensors)
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "config_hash": config_hash,
        "extra": extra or {},
        "tensors": [
            {"name": n, "shape": list(np.asarray(tensors[n]).shape), "dtype": "<f8"} for n in names
        ],
    }
    blob = _canonical_json(manifest)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            arr = np.ascontiguousarray(np.asarray(tensors[n], dtype=np.float64))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Return (manifest dict, {name: float64 array})."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: bad magic in {path}")
    (length,) = struct.unpack("<I", raw[8:12])
    try:
        manifest = json.loads(raw[12 : 12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}: {e}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    tensors = {}
    offset = 12 + length
    for rec in manifest["tensors"]:
        shape = tuple(rec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated checkpoint: tensor '{rec['name']}' incomplete")
        tensors[rec["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    return manifest, tensors

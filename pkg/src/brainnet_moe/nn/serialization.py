"""Checkpoint layout: ``manifest.json`` plus one raw little-endian float64 blob.

The manifest lists ``{name, shape, dtype, offset}`` per tensor in blob order;
``offset`` is in bytes. Anything else the caller wants to keep (model config,
version) goes under ``"meta"``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpointError

MANIFEST = "manifest.json"
BLOB = "tensors.bin"
_LE_F64 = np.dtype("<f8")


def save_tensors(directory, named: list[tuple[str, np.ndarray]], meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / BLOB, "wb") as fh:
        for name, arr in named:
            raw = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "dtype": "f64", "offset": offset})
            fh.write(raw)
            offset += len(raw)
    manifest = {"format": "brainnet-moe-checkpoint/1", "tensors": entries,
                "blob": BLOB, "blob_bytes": offset, "meta": meta or {}}
    with open(directory / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_tensors(directory) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into ``({name: array}, meta)``."""
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        entries = manifest["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable manifest {mpath}: {exc}") from exc
    bpath = directory / manifest.get("blob", BLOB)
    if not bpath.is_file():
        raise CorruptCheckpointError(f"tensor blob {bpath} is missing")
    blob = bpath.read_bytes()

    expected = 0
    for e in entries:
        if e.get("dtype") != "f64":
            raise CorruptCheckpointError(f"tensor {e.get('name')!r} has unsupported dtype {e.get('dtype')!r}")
        if e["offset"] != expected:
            raise CorruptCheckpointError(
                f"tensor {e['name']!r} starts at byte {e['offset']}, expected {expected}")
        expected += 8 * int(np.prod(e["shape"], dtype=np.int64))
    if len(blob) != expected or manifest.get("blob_bytes", expected) != expected:
        raise CorruptCheckpointError(
            f"blob holds {len(blob)} bytes but the manifest describes {expected}")

    out = {}
    for e in entries:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=_LE_F64, count=n, offset=e["offset"])
        out[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return out, manifest.get("meta", {})


def checkpoint_exists(directory) -> bool:
    return os.path.isfile(Path(directory) / MANIFEST)

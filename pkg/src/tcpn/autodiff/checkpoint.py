"""Checkpoint files: a JSON manifest plus one raw little-endian buffer.

The manifest maps each parameter name to its shape, dtype and byte offset in
the buffer file, and carries arbitrary JSON metadata (vocabulary, configs).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

HEADER = "TCPN-CKPT-1"


class CheckpointError(ValueError):
    pass


def buffer_path(manifest: str | Path) -> Path:
    return Path(manifest).with_suffix(".bin")


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray],
                    meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset,
                         "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    buf = buffer_path(path)
    buf.write_bytes(b"".join(chunks))
    manifest = {"header": HEADER, "buffer": buf.name, "params": entries, "meta": dict(meta or {})}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("header") != HEADER:
        raise CheckpointError(f"{path}: expected header {HEADER!r}, got {manifest.get('header')!r}")
    raw = (path.parent / manifest["buffer"]).read_bytes()
    arrays = {}
    for name, e in manifest["params"].items():
        dt = np.dtype(e["dtype"])
        chunk = raw[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[name] = np.frombuffer(chunk, dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(e["shape"])
    return arrays, manifest.get("meta", {})

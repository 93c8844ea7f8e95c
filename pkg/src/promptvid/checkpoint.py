"""Checkpoint I/O: manifest.json plus a weights.bin blob.

The manifest records the config and one entry per tensor (name, shape,
freeze flag, byte offset and length); the blob is all tensor data
concatenated as little-endian float64. Round trips are byte-exact.
The manifest also carries the vocabulary and training label order so a
checkpoint is self-contained for evaluation.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import (
    CheckpointManifestError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    ConfigurationError,
    MissingArtifactError,
)
from .params import ParameterStore, Tensor

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


def save_checkpoint(store: ParameterStore, config: ModelConfig, path, vocab_tokens=None,
                    labels=None) -> Path:
    """Write the store and config under `path` (a directory, created)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records = []
    chunks = []
    offset = 0
    for name in store.names():
        data = np.ascontiguousarray(store[name].data, dtype="<f8")
        raw = data.tobytes()
        records.append({
            "name": name,
            "shape": list(data.shape),
            "frozen": store.frozen(name),
            "offset": offset,
            "length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "tensors": records,
    }
    if vocab_tokens is not None:
        manifest["vocab"] = list(vocab_tokens)
    if labels is not None:
        manifest["labels"] = list(labels)
    (path / WEIGHTS_NAME).write_bytes(b"".join(chunks))
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    """Read a checkpoint directory.

    Returns (store, config, extras) where extras holds the optional vocab
    and labels lists. Corrupt manifests, shape mismatches, and truncated
    blobs raise distinct errors.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    weights_path = path / WEIGHTS_NAME
    if not path.is_dir() or not manifest_path.is_file() or not weights_path.is_file():
        raise MissingArtifactError(f"no checkpoint at {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointManifestError(f"unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict):
        raise CheckpointManifestError("manifest is not an object")
    for key in ("format_version", "config", "tensors"):
        if key not in manifest:
            raise CheckpointManifestError(f"manifest missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise CheckpointManifestError(f"unsupported format version {manifest['format_version']}")
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except (ConfigurationError, TypeError) as exc:
        raise CheckpointManifestError(f"bad config in manifest: {exc}") from exc

    blob = weights_path.read_bytes()
    store = ParameterStore()
    for rec in manifest["tensors"]:
        try:
            name = rec["name"]
            shape = tuple(int(s) for s in rec["shape"])
            frozen = bool(rec["frozen"])
            offset = int(rec["offset"])
            length = int(rec["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointManifestError(f"bad tensor record: {exc}") from exc
        expected = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if length != expected:
            raise CheckpointShapeError(
                f"{name}: shape {shape} needs {expected} bytes, record says {length}"
            )
        if offset + length > len(blob):
            raise CheckpointTruncatedError(
                f"{name}: needs bytes [{offset}, {offset + length}), blob has {len(blob)}"
            )
        data = np.frombuffer(blob, dtype="<f8", count=length // 8, offset=offset).reshape(shape)
        store.add(name, Tensor(data), frozen)
    extras = {
        "vocab": manifest.get("vocab"),
        "labels": manifest.get("labels"),
    }
    return store, config, extras

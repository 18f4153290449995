"""Raw tensor dump format: little-endian float32 binaries plus a JSON manifest.

A dump is a directory holding ``manifest.json`` and one ``.bin`` file per
tensor.  The manifest records the kind of dump, free-form metadata (branch,
timesteps, schedule hash, ...) and the shape of every entry.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def save_tensors(directory: str | Path, kind: str, meta: dict,
                 tensors: dict[str, torch.Tensor]) -> Path:
    """Write tensors and manifest into ``directory`` (created if missing)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, tensor) in enumerate(tensors.items()):
        filename = f"t{i:05d}.bin"
        arr = tensor.detach().cpu().numpy()
        arr.astype("<f4").tofile(directory / filename)
        entries.append({"name": name, "file": filename, "shape": list(arr.shape)})
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "dtype": "float32",
        "byte_order": "little",
        "meta": meta,
        "entries": entries,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return directory


def load_tensors(directory: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    """Read a dump back; returns (manifest, {name: tensor})."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigurationError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"unsupported dump format version {manifest.get('format_version')}")
    tensors: dict[str, torch.Tensor] = {}
    for entry in manifest["entries"]:
        arr = np.fromfile(directory / entry["file"], dtype="<f4")
        arr = arr.reshape(entry["shape"]).astype(np.float32)
        tensors[entry["name"]] = torch.from_numpy(arr)
    return manifest, tensors

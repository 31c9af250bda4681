"""Checkpoint container: JSON manifest plus one little-endian float64 blob."""

import json
from pathlib import Path

import numpy as np

from .errors import CompatibilityError

FORMAT = "catrinet-ckpt-v1"


def save(path, named_arrays, meta=None):
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in named_arrays:
        arr = np.array(arr, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    blob = path.with_suffix(".bin")
    blob.write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "blob": blob.name, "params": entries, "meta": meta or {}}
    manifest_path = path.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def load(path):
    """Return ``(dict name -> array, meta)``."""
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path.with_suffix(".json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise CompatibilityError(f"unsupported checkpoint format {manifest.get('format')!r}")
    raw = (manifest_path.parent / manifest["blob"]).read_bytes()
    arrays = {}
    for e in manifest["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(tuple(e["shape"])).astype(np.float64)
    return arrays, manifest["meta"]

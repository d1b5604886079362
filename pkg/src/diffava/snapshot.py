"""Parameter snapshots: one little-endian binary blob plus a JSON sidecar.

``<stem>.bin`` holds the tensors back to back; ``<stem>.json`` lists each
tensor's name, dtype, shape and byte offset along with free-form metadata
(seed, config hash, ...). Both files are written deterministically so reruns
can be compared byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError

_DTYPES = {"f4": "<f4", "f8": "<f8"}


def _paths(stem):
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_params(stem, params: dict, meta: dict | None = None, dtype: str = "f8"):
    bin_path, json_path = _paths(stem)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, arr in params.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(np.shape(arr)),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    bin_path.write_bytes(b"".join(blobs))
    sidecar = {"format": "diffava-params", "version": 1, "tensors": entries, "meta": meta or {}}
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def load_params(stem) -> tuple[dict, dict]:
    """Returns ``(params, meta)``; arrays come back as float64."""
    bin_path, json_path = _paths(stem)
    try:
        sidecar = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{json_path}: invalid JSON sidecar: {exc.msg}", exc.pos) from exc
    blob = bin_path.read_bytes()
    params = {}
    for e in sidecar.get("tensors", []):
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise DataFormatError(f"{bin_path}: tensor {e['name']!r} truncated", len(blob))
        arr = np.frombuffer(blob, dtype=_DTYPES[e["dtype"]], count=e["nbytes"] // int(e["dtype"][1]),
                            offset=e["offset"])
        params[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return params, sidecar.get("meta", {})


def read_meta(stem) -> dict:
    return json.loads(_paths(stem)[1].read_text()).get("meta", {})

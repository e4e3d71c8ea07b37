"""Checkpoint files: ``manifest.json`` plus ``tensors.btr``.

The tensor store is a BTR1 container with one band, one row and every
tensor flattened end to end; the manifest's ``tensors`` list names each
record with its shape and offset.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..raster_io import RasterGrid, read_raster, write_raster

MANIFEST = "manifest.json"
TENSORS = "tensors.btr"


def save_checkpoint(directory, manifest: dict, tensors: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        records.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.reshape(-1).astype(np.float32))
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)
    write_raster(RasterGrid(flat.reshape(1, 1, -1), ["tensors"], (0.0, 0.0), (1.0, -1.0), math.nan, "none"), directory / TENSORS)
    body = dict(manifest)
    body["tensors"] = records
    (directory / MANIFEST).write_text(json.dumps(body, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    flat = read_raster(directory / TENSORS).values.reshape(-1)
    tensors = {}
    for rec in manifest["tensors"]:
        size = math.prod(rec["shape"])
        tensors[rec["name"]] = flat[rec["offset"] : rec["offset"] + size].reshape(rec["shape"]).copy()
    return manifest, tensors

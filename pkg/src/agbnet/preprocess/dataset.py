"""Channel stacking, patch extraction and train-set standardization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..raster_io import LABEL_SENTINEL, RasterGrid
from .bands import ConfigurationError

# Sentinel-1 (3), Sentinel-2 L2A (12), vegetation indices (6), PALSAR-2 (4),
# terrain (2), coordinates (2)
ROSTER = (
    "VV", "VH", "VV_VH",
    "B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12",
    "NDVI", "kNDVI", "NDMI", "NDVI_min", "NDVI_max", "NDVI_diff",
    "HV", "HH", "HV_HH", "LIA",
    "elevation", "slope",
    "lat", "lon",
)  # fmt: skip

PATCH_SIZE = 64


@dataclass
class PatchSample:
    """A feature patch (channels first, C x 64 x 64) with its sparse labels."""

    features: np.ndarray
    labels: np.ndarray
    origin_row: int
    origin_col: int
    fold_id: int = -1

    @property
    def n_labeled(self) -> int:
        return int((self.labels >= 0).sum())


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    label_mean: float
    label_std: float
    channel_names: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "label_mean": float(self.label_mean),
            "label_std": float(self.label_std),
            "channel_names": list(self.channel_names),
        }

    @classmethod
    def from_dict(cls, d) -> "StandardizationStats":
        return cls(
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["std"], dtype=np.float64),
            float(d["label_mean"]),
            float(d["label_std"]),
            tuple(d.get("channel_names", ())),
        )


def stack_channels(sources, roster=ROSTER) -> RasterGrid:
    """Assemble named single- or multi-band grids into one stack in roster order.

    ``sources`` is an iterable of RasterGrids (band names identify the
    planes) or a mapping name -> RasterGrid/array. Every roster band must be
    present exactly once; extra bands are ignored.
    """
    planes: dict[str, np.ndarray] = {}
    template = None
    items = sources.items() if isinstance(sources, dict) else ((None, g) for g in sources)
    for key, src in items:
        if isinstance(src, RasterGrid):
            template = template or src
            if src.rows != template.rows or src.cols != template.cols:
                raise ConfigurationError("sources are not co-registered")
            names = src.band_names if key is None or src.bands > 1 else [key]
            for i, n in enumerate(names):
                planes[n] = src.values[i]
        else:
            if key is None:
                raise ConfigurationError("bare arrays must be passed by name")
            planes[key] = np.asarray(src)
    missing = [n for n in roster if n not in planes]
    if missing:
        raise ConfigurationError(f"missing roster bands: {missing}")
    values = np.stack([planes[n] for n in roster])
    if template is None:
        return RasterGrid(values, list(roster))
    return template.like(values, list(roster))


def patchify(stack, labels, size: int = PATCH_SIZE, require_labels: bool = True):
    """Cut co-registered stack/labels into non-overlapping size x size patches.

    Partial tiles at the right/bottom edge are dropped, as are tiles without
    a single labelled pixel when ``require_labels`` is set.
    """
    values = stack.values if isinstance(stack, RasterGrid) else np.asarray(stack)
    lab = labels.values[0] if isinstance(labels, RasterGrid) else np.asarray(labels)
    if lab.ndim == 3:
        lab = lab[0]
    _, rows, cols = values.shape
    if lab.shape != (rows, cols):
        raise ValueError(f"labels {lab.shape} not co-registered with stack {(rows, cols)}")
    if rows < size or cols < size:
        raise ValueError(f"grid {rows}x{cols} is smaller than one {size}x{size} patch")
    out = []
    for r in range(0, rows - size + 1, size):
        for c in range(0, cols - size + 1, size):
            y = lab[r : r + size, c : c + size]
            if require_labels and not (y >= 0).any():
                continue
            out.append(PatchSample(values[:, r : r + size, c : c + size].copy(), y.copy(), r, c))
    return out


def _as_arrays(patches):
    if isinstance(patches, (list, tuple)) and not (len(patches) == 2 and isinstance(patches[0], np.ndarray)):
        x = np.stack([p.features for p in patches])
        y = np.stack([p.labels for p in patches])
        return x, y
    return patches


def standardize_fit(train_patches, nodata=None, channel_names=()) -> StandardizationStats:
    """Per-channel population mean/std over training data only.

    Nodata pixels are excluded from feature statistics and sentinel labels
    from the label statistics.
    """
    x, y = _as_arrays(train_patches)
    x = x.astype(np.float64)
    c = x.shape[1]
    flat = np.moveaxis(x, 1, 0).reshape(c, -1)
    ok = np.isfinite(flat)
    if nodata is not None:
        ok &= flat != nodata
    cnt = ok.sum(axis=1)
    mean = np.where(ok, flat, 0.0).sum(axis=1) / np.maximum(cnt, 1)
    var = (np.where(ok, flat - mean[:, None], 0.0) ** 2).sum(axis=1) / np.maximum(cnt, 1)
    std = np.sqrt(var)
    names = tuple(channel_names) or tuple(f"channel_{i}" for i in range(c))
    for i in range(c):
        if cnt[i] == 0 or not std[i] > 0:
            raise ConfigurationError(f"channel {names[i]!r} has zero variance in the training set")
    lab = np.asarray(y, dtype=np.float64)
    lab = lab[lab >= 0]
    if lab.size == 0:
        raise ConfigurationError("no labelled pixels in the training set")
    label_std = lab.std()
    if not label_std > 0:
        raise ConfigurationError("label has zero variance in the training set")
    return StandardizationStats(mean, std, float(lab.mean()), float(label_std), names)


def standardize_apply(features, stats: StandardizationStats, nodata=None, fill=0.0):
    """(D - mean) / std per channel along axis -3; nodata becomes ``fill``."""
    x = np.asarray(features, dtype=np.float64)
    shape = (-1, 1, 1)
    out = (x - stats.mean.reshape(shape)) / stats.std.reshape(shape)
    if nodata is not None:
        bad = ~np.isfinite(x) | (x == nodata)
        out[bad] = fill
    return out


def standardize_invert(data, stats: StandardizationStats):
    x = np.asarray(data, dtype=np.float64)
    shape = (-1, 1, 1)
    return x * stats.std.reshape(shape) + stats.mean.reshape(shape)


def standardize_labels(labels, stats: StandardizationStats):
    """Standardize labelled pixels; sentinel pixels stay at LABEL_SENTINEL.

    Callers must keep their own label mask: a standardized AGB can itself
    equal -1.
    """
    y = np.asarray(labels, dtype=np.float64)
    return np.where(y >= 0, (y - stats.label_mean) / stats.label_std, LABEL_SENTINEL)


def destandardize_labels(values, stats: StandardizationStats):
    return np.asarray(values, dtype=np.float64) * stats.label_std + stats.label_mean


def save_patches(path, patches, meta: dict | None = None) -> None:
    """Write patches to a compressed ``.npz`` archive with JSON metadata."""
    if not patches:
        raise ValueError("no patches to save")
    np.savez_compressed(
        path,
        features=np.stack([p.features for p in patches]).astype(np.float32),
        labels=np.stack([p.labels for p in patches]).astype(np.float32),
        origins=np.array([(p.origin_row, p.origin_col) for p in patches], dtype=np.int64),
        fold_id=np.array([p.fold_id for p in patches], dtype=np.int64),
        meta=np.array(json.dumps(meta or {})),
    )


def load_patches(path):
    """Inverse of :func:`save_patches`; returns (patches, meta)."""
    with np.load(path) as z:
        feats, labs, origins, folds = z["features"], z["labels"], z["origins"], z["fold_id"]
        meta = json.loads(str(z["meta"]))
    patches = [
        PatchSample(feats[i].astype(np.float64), labs[i].astype(np.float64), int(origins[i, 0]), int(origins[i, 1]), int(folds[i]))
        for i in range(len(feats))
    ]
    return patches, meta

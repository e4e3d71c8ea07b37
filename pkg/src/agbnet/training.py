"""Splitting, cross-validation folds, the training loop and regression metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .models import ArchitectureDescriptor, build_model
from .preprocess.dataset import (
    ROSTER,
    PatchSample,
    StandardizationStats,
    destandardize_labels,
    standardize_apply,
    standardize_fit,
    standardize_labels,
)
from .preprocess.footprints import agb_from_rh80, footprint_mean
from .raster_io import RasterGrid

CHECKPOINT_FORMAT = "agbnet-checkpoint/1"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    initial_lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 40
    max_epochs: int = 120
    batch_size: int = 128
    weight_decay: float = 1e-5
    split_ratio: tuple = (7, 2, 1)
    folds: int = 5
    seed: int = 0

    def validate(self) -> None:
        for name in ("initial_lr", "lr_decay_factor", "lr_decay_every", "max_epochs", "batch_size", "folds"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if len(self.split_ratio) != 3 or sum(self.split_ratio) != 10 or min(self.split_ratio) <= 0:
            raise ValueError("split_ratio must be three positive parts summing to 10")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.initial_lr * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratio"] = list(self.split_ratio)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        kw = {k: v for k, v in d.items() if k in known}
        if "split_ratio" in kw:
            kw["split_ratio"] = tuple(kw["split_ratio"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# splits


def split_dataset(items, ratio=(7, 2, 1), seed: int = 0):
    """Seeded permutation cut into floor(0.7N) / floor(0.2N) / remainder."""
    items = list(items)
    n = len(items)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    total = sum(ratio)
    n_train = n * ratio[0] // total
    n_val = n * ratio[1] // total
    order = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: [items[i] for i in idx]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


def kfold_plan(items, k: int = 5, seed: int = 0):
    """``k`` (train, val) pairs; every item is validated exactly once."""
    items = list(items)
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(items) < k:
        raise ValueError(f"cannot make {k} folds from {len(items)} samples")
    order = np.random.default_rng(seed).permutation(len(items))
    chunks = np.array_split(order, k)
    plan = []
    for i in range(k):
        val = [items[j] for j in chunks[i]]
        train = [items[j] for c in chunks[:i] + chunks[i + 1 :] for j in c]
        plan.append((train, val))
    return plan


# ---------------------------------------------------------------------------
# data


@dataclass
class FootprintSample:
    """Footprint-mean feature vector and the footprint's AGB (Mg/ha)."""

    features: np.ndarray
    label: float
    id: str = ""


def footprint_samples(stack: RasterGrid, footprints) -> list:
    """Area-weighted feature means under each footprint, labelled with RH80 AGB."""
    out = []
    for fp in footprints:
        out.append(FootprintSample(footprint_mean(stack, fp), float(agb_from_rh80(fp.rh80)), fp.id))
    return out


def _is_vector_data(data) -> bool:
    return len(data) > 0 and isinstance(data[0], FootprintSample)


def fit_stats(data, nodata=None, channel_names=ROSTER) -> StandardizationStats:
    """Standardization statistics from training samples only."""
    if _is_vector_data(data):
        x = np.stack([s.features for s in data])[:, :, None, None]
        y = np.array([s.label for s in data])[:, None, None]
        return standardize_fit((x, y), nodata, channel_names)
    return standardize_fit(data, nodata, channel_names)


def _arrays(data, stats, nodata, dtype):
    """Standardized (x, y, mask) arrays for patches or footprint samples."""
    if _is_vector_data(data):
        x = np.stack([s.features for s in data])
        x = standardize_apply(x[:, :, None, None], stats, nodata)[:, :, 0, 0]
        raw = np.array([s.label for s in data])
    else:
        x = standardize_apply(np.stack([p.features for p in data]), stats, nodata)
        raw = np.stack([p.labels for p in data])[:, None]
    mask = raw >= 0
    y = np.where(mask, standardize_labels(raw, stats), 0.0)
    return x.astype(dtype), y.astype(dtype), mask


def _batches(order, size):
    out = [order[i : i + size] for i in range(0, len(order), size)]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def predict_arrays(model, x, batch_size: int = 16) -> np.ndarray:
    """Eval-mode forward over standardized inputs, in the model's units."""
    out = []
    with nn.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(model.forward(x[i : i + batch_size], train=False).data)
    return np.concatenate(out) if out else np.zeros((0,))


# ---------------------------------------------------------------------------
# checkpoint


@dataclass
class ModelCheckpoint:
    desc: ArchitectureDescriptor
    stats: StandardizationStats
    state: dict
    seed: int = 0
    epoch: int = 0
    val_loss: float = math.nan
    config: dict = field(default_factory=dict)
    nodata: float | None = None

    def build(self, dtype=np.float32):
        model = build_model(self.desc, self.seed, dtype)
        model.load_state_dict(self.state)
        return model

    def manifest(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "architecture": self.desc.to_dict(),
            "roster": list(self.stats.channel_names),
            "stats": self.stats.to_dict(),
            "seed": self.seed,
            "epoch": self.epoch,
            "val_loss": self.val_loss,
            "config": self.config,
            "nodata": self.nodata,
        }

    def save(self, directory) -> Path:
        return nn.save_checkpoint(directory, self.manifest(), self.state)

    @classmethod
    def load(cls, directory) -> "ModelCheckpoint":
        manifest, tensors = nn.load_checkpoint(directory)
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{directory}: not a model checkpoint")
        return cls(
            ArchitectureDescriptor.from_dict(manifest["architecture"]),
            StandardizationStats.from_dict(manifest["stats"]),
            tensors,
            manifest["seed"],
            manifest["epoch"],
            manifest["val_loss"],
            manifest.get("config", {}),
            manifest.get("nodata"),
        )


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for h in self.history:
                w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["lr"])])


# ---------------------------------------------------------------------------
# training


def train(
    train_data,
    val_data,
    desc: ArchitectureDescriptor,
    config: TrainConfig | None = None,
    stats: StandardizationStats | None = None,
    nodata=None,
    dtype=np.float32,
    progress=None,
) -> TrainResult:
    """Minimize masked MSE + weight_decay * ||W||^2 with Adam.

    ``train_data``/``val_data`` are lists of PatchSample (AU, UNet) or
    FootprintSample (AU_FC). Statistics are fitted on ``train_data`` unless
    given. The returned checkpoint holds the weights of the epoch with the
    lowest validation loss (the last epoch if there is no validation set).
    ``progress`` is called with each history row.
    """
    config = config or TrainConfig()
    config.validate()
    if not train_data:
        raise ValueError("empty training set")
    if (desc.kind == "AU_FC") != _is_vector_data(train_data):
        raise ValueError(f"{desc.kind} expects {'footprint samples' if desc.kind == 'AU_FC' else 'patches'}")
    if stats is None:
        stats = fit_stats(train_data, nodata, ROSTER[: desc.in_channels] if desc.in_channels == len(ROSTER) else ())
    x, y, m = _arrays(train_data, stats, nodata, dtype)
    has_val = bool(val_data)
    if has_val:
        xv, yv, mv = _arrays(val_data, stats, nodata, dtype)

    model = build_model(desc, config.seed, dtype)
    opt = nn.Adam(model.params, lr=config.initial_lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 2])
    history = []
    best = (math.inf, None, 0)
    for epoch in range(1, config.max_epochs + 1):
        opt.lr = config.lr_at(epoch)
        losses, weights = [], []
        for b, idx in enumerate(_batches(rng.permutation(len(x)), config.batch_size), start=1):
            if not m[idx].any():
                continue
            opt.zero_grad()
            pred = model.forward(x[idx], train=True)
            loss = nn.masked_mse_l2_loss(pred, y[idx], m[idx], model.decay_params(), config.weight_decay)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            try:
                opt.step()
            except nn.NonFiniteGradientError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(value)
            weights.append(len(idx))
        train_loss = float(np.average(losses, weights=weights))
        val_loss = _masked_mse(predict_arrays(model, xv), yv, mv) if has_val else math.nan
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": opt.lr}
        history.append(row)
        if progress is not None:
            progress(row)
        score = val_loss if has_val else -epoch
        if score < best[0]:
            best = (score, model.state_dict(), epoch)
    ckpt = ModelCheckpoint(
        desc, stats, best[1], config.seed, best[2], best[0] if has_val else math.nan, config.to_dict(), nodata
    )
    return TrainResult(ckpt, history)


def _masked_mse(pred, y, m) -> float:
    pred = pred.reshape(y.shape).astype(np.float64)
    d = np.where(m, pred - y, 0.0)
    return float((d * d).sum() / max(int(m.sum()), 1))


# ---------------------------------------------------------------------------
# metrics and evaluation


@dataclass
class MetricsReport:
    r2: float
    rmse: float
    bias: float
    n: int
    level: str
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["r2"]):
            d["r2"] = None
        return d


def regression_metrics(y_true, y_pred, level: str = "pixel") -> MetricsReport:
    """R^2, RMSE and bias (mean of prediction minus reference)."""
    y = np.asarray(y_true, dtype=np.float64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"{y.size} references vs {p.size} predictions")
    if y.size == 0:
        raise ValueError("no samples to evaluate")
    resid = p - y
    ss_res = float((resid**2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    flags = []
    if ss_tot == 0:
        r2 = math.nan
        flags.append("r2_undefined_constant_reference")
    else:
        r2 = 1.0 - ss_res / ss_tot
    return MetricsReport(r2, math.sqrt(ss_res / y.size), float(resid.mean()), int(y.size), level, flags)


def predict_patches(checkpoint: ModelCheckpoint, patches, model=None) -> np.ndarray:
    """Per-pixel AGB (Mg/ha) for each patch, N x H x W."""
    model = model or checkpoint.build()
    x, _, _ = _arrays(patches, checkpoint.stats, checkpoint.nodata, model.dtype)
    return destandardize_labels(predict_arrays(model, x)[:, 0], checkpoint.stats)


def patch_grid(template: RasterGrid, patch: PatchSample, values) -> RasterGrid:
    """Georeferenced single-band grid for a patch cut from ``template``."""
    x0, y0 = template.origin
    px, py = template.pixel_size
    origin = (x0 + patch.origin_col * px, y0 + patch.origin_row * py)
    return RasterGrid(np.asarray(values)[None], ["AGB"], origin, (px, py), template.nodata, template.crs)


def assign_footprints(template: RasterGrid, patches, footprints):
    """Map each footprint to the patch containing its centre (or drop it)."""
    out = []
    for fp in footprints:
        col, row = template.to_pixel(fp.center_x, fp.center_y)
        for i, p in enumerate(patches):
            h, w = p.labels.shape
            if p.origin_row <= row < p.origin_row + h and p.origin_col <= col < p.origin_col + w:
                out.append((i, fp))
                break
    return out


def evaluate(
    checkpoint: ModelCheckpoint,
    patches,
    level: str = "pixel",
    footprints=None,
    template: RasterGrid | None = None,
    model=None,
    predictions=None,
) -> MetricsReport:
    """Metrics in Mg/ha for patches or footprint samples.

    Pixel level pairs every labelled pixel with its prediction. Footprint
    level pairs the area-weighted mean prediction over each footprint disc
    (clipped to the patch holding its centre) with the footprint's RH80 AGB;
    it needs ``footprints`` and the ``template`` grid the patches were cut
    from. AU_FC checkpoints take FootprintSample lists and are evaluated at
    footprint level directly.
    """
    if level not in ("pixel", "footprint"):
        raise ValueError(f"unknown level {level!r}")
    if _is_vector_data(patches):
        model = model or checkpoint.build()
        x, _, _ = _arrays(patches, checkpoint.stats, checkpoint.nodata, model.dtype)
        pred = destandardize_labels(predict_arrays(model, x, batch_size=64), checkpoint.stats)
        return regression_metrics([s.label for s in patches], pred, "footprint")
    pred = predict_patches(checkpoint, patches, model) if predictions is None else predictions
    if level == "pixel":
        lab = np.stack([p.labels for p in patches])
        ok = lab >= 0
        return regression_metrics(lab[ok], pred[ok], "pixel")
    if footprints is None or template is None:
        raise ValueError("footprint level needs footprints and the template grid")
    ys, ps = [], []
    for i, fp in assign_footprints(template, patches, footprints):
        ps.append(float(footprint_mean(patch_grid(template, patches[i], pred[i]), fp)[0]))
        ys.append(float(agb_from_rh80(fp.rh80)))
    return regression_metrics(ys, ps, "footprint")

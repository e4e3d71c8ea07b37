"""The synthetic desk-scale benchmark: data preparation and model runs.

One seeded landscape is cut into patches and split 7:2:1; models train on
one fold of the train+validation pool and are scored on the fixed test
split at pixel and footprint level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .models import ArchitectureDescriptor
from .preprocess.dataset import patchify
from .preprocess.pipeline import build_labels
from .raster_io import RasterGrid
from .synthdata import SynthSpec, generate_landscape, sample_footprints
from .training import (
    MetricsReport,
    ModelCheckpoint,
    TrainConfig,
    assign_footprints,
    evaluate,
    footprint_samples,
    kfold_plan,
    predict_patches,
    split_dataset,
    train,
)

# Schedules scaled to desk cost: same three-phase decay, fewer epochs.
DENSE_CONFIG = TrainConfig(max_epochs=30, lr_decay_every=10, batch_size=8)
FC_CONFIG = TrainConfig(max_epochs=12, lr_decay_every=4, batch_size=32)


@dataclass
class Benchmark:
    spec: SynthSpec
    stack: RasterGrid
    truth: RasterGrid
    mask: RasterGrid
    footprints: list
    labels: RasterGrid
    patches: list
    train: list
    val: list
    test: list
    folds: list
    reports: list = field(default_factory=list)

    def fold(self, k: int = 0):
        return self.folds[k]

    def samples(self, patches) -> list:
        """Footprint-mean samples for footprints centred in ``patches``."""
        return footprint_samples(self.stack, [fp for _, fp in assign_footprints(self.stack, patches, self.footprints)])


def build_benchmark(spec: SynthSpec | None = None, split_seed: int = 0, k: int = 5) -> Benchmark:
    spec = spec or SynthSpec()
    stack, truth, mask = generate_landscape(spec)
    kndvi = stack.like(stack.band("kNDVI")[None], ["kNDVI"])
    raw = sample_footprints(truth, spec, kndvi)
    labels, kept, reports = build_labels(raw, stack)
    patches = patchify(stack, labels)
    tr, va, te = split_dataset(patches, seed=split_seed)
    folds = kfold_plan(tr + va, k, seed=split_seed)
    return Benchmark(spec, stack, truth, mask, kept, labels, patches, tr, va, te, folds, reports)


@dataclass
class RunResult:
    checkpoint: ModelCheckpoint
    history: list
    metrics: dict
    seconds: float
    predictions: np.ndarray | None = None


def run_model(
    bench: Benchmark,
    kind: str = "AU",
    depth: int = 3,
    base_channels: int = 16,
    seed: int = 0,
    fold: int = 0,
    config: TrainConfig | None = None,
) -> RunResult:
    """Train one architecture on one fold and score it on the test split."""
    desc = ArchitectureDescriptor(kind, depth, base_channels, bench.stack.bands)
    base = config or (FC_CONFIG if kind == "AU_FC" else DENSE_CONFIG)
    cfg = TrainConfig(**{**base.to_dict(), "split_ratio": tuple(base.split_ratio), "seed": seed})
    tr, va = bench.fold(fold)
    t0 = time.perf_counter()
    if kind == "AU_FC":
        res = train(bench.samples(tr), bench.samples(va), desc, cfg)
        seconds = time.perf_counter() - t0
        m = evaluate(res.checkpoint, bench.samples(bench.test), "footprint")
        return RunResult(res.checkpoint, res.history, {"footprint": m}, seconds)
    res = train(tr, va, desc, cfg)
    seconds = time.perf_counter() - t0
    model = res.checkpoint.build()
    pred = predict_patches(res.checkpoint, bench.test, model)
    metrics: dict[str, MetricsReport] = {
        "pixel": evaluate(res.checkpoint, bench.test, "pixel", predictions=pred),
        "footprint": evaluate(res.checkpoint, bench.test, "footprint", bench.footprints, bench.stack, predictions=pred),
    }
    return RunResult(res.checkpoint, res.history, metrics, seconds, pred)

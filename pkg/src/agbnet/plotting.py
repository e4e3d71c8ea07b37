"""Figure rendering for maps, uncertainty and prediction-vs-reference scatter.

Everything draws with the non-interactive Agg backend straight to files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .raster_io import RasterGrid  # noqa: E402


def _plane(raster):
    if isinstance(raster, RasterGrid):
        v = raster.values[0].astype(np.float64)
        return np.where(raster.valid_mask()[0], v, np.nan)
    return np.asarray(raster, dtype=np.float64).reshape(np.shape(raster)[-2:])


def plot_map(raster, path, title: str = "", cmap: str = "viridis", label: str = "Mg/ha", vmin=None, vmax=None) -> Path:
    """Render one band as an image with a colour bar; nodata is left blank."""
    a = _plane(raster)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(a, cmap=cmap, vmin=vmin, vmax=vmax, interpolation="nearest")
    fig.colorbar(im, ax=ax, label=label)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_scatter(reference, predicted, path, title: str = "", metrics=None) -> Path:
    """Density-coloured scatter of predicted vs reference AGB with a 1:1 line."""
    y = np.asarray(reference, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    hi = float(max(y.max(initial=1.0), p.max(initial=1.0))) * 1.05
    counts, xe, ye = np.histogram2d(y, p, bins=40, range=[[0, hi], [0, hi]])
    ix = np.clip(np.digitize(y, xe) - 1, 0, 39)
    iy = np.clip(np.digitize(p, ye) - 1, 0, 39)
    density = counts[ix, iy]
    order = np.argsort(density)
    fig, ax = plt.subplots(figsize=(5, 5))
    sc = ax.scatter(y[order], p[order], c=density[order], s=6, cmap="turbo")
    fig.colorbar(sc, ax=ax, label="points per bin")
    ax.plot([0, hi], [0, hi], "k--", lw=1)
    ax.set_xlim(0, hi)
    ax.set_ylim(0, hi)
    ax.set_xlabel("reference AGB (Mg/ha)")
    ax.set_ylabel("predicted AGB (Mg/ha)")
    if metrics is not None:
        r2 = "n/a" if metrics.r2 != metrics.r2 else f"{metrics.r2:.3f}"
        ax.text(
            0.03, 0.97, f"R2 = {r2}\nRMSE = {metrics.rmse:.2f}\nbias = {metrics.bias:.2f}\nn = {metrics.n}",
            transform=ax.transAxes, va="top",
        )  # fmt: skip
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_history(history, path, title: str = "") -> Path:
    """Train and validation loss per epoch on a log scale."""
    ep = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ep, [h["train_loss"] for h in history], label="train")
    ax.plot(ep, [h["val_loss"] for h in history], label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)

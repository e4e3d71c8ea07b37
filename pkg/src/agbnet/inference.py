"""Whole-raster tiled prediction, fold ensembles and forest masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess.dataset import destandardize_labels, standardize_apply
from .raster_io import DEFAULT_NODATA, RasterGrid
from .training import ModelCheckpoint, predict_arrays


class PlanError(RuntimeError):
    pass


@dataclass
class TilePlan:
    rows: int
    cols: int
    row_origins: tuple
    col_origins: tuple
    tile: int = 64
    overlap: int = 10
    trim: int = 3

    @property
    def origins(self) -> list:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def retained(self, r0: int, c0: int):
        """Slices of a tile kept after trimming, in tile coordinates.

        The trim ring is kept wherever the tile touches the raster edge.
        """
        t, k = self.tile, self.trim
        rs = slice(0 if r0 == 0 else k, t if r0 + t == self.rows else t - k)
        cs = slice(0 if c0 == 0 else k, t if c0 + t == self.cols else t - k)
        return rs, cs

    def coverage(self) -> np.ndarray:
        """Number of retained tile regions covering each pixel."""
        count = np.zeros((self.rows, self.cols), dtype=np.int64)
        for r0, c0 in self.origins:
            rs, cs = self.retained(r0, c0)
            count[r0 + rs.start : r0 + rs.stop, c0 + cs.start : c0 + cs.stop] += 1
        return count


def _axis_origins(n, tile, stride):
    out = list(range(0, n - tile + 1, stride))
    if out[-1] != n - tile:
        out.append(n - tile)
    return tuple(out)


def plan_tiles(rows: int, cols: int, tile: int = 64, overlap: int = 10, trim: int = 3) -> TilePlan:
    """Origins at stride ``tile - overlap``, the last one clamped in bounds."""
    if rows < tile or cols < tile:
        raise ValueError(f"raster {rows}x{cols} is smaller than one {tile}x{tile} tile")
    if not 0 <= overlap < tile:
        raise ValueError("overlap must be in [0, tile)")
    if trim < 0 or 2 * trim > overlap:
        raise ValueError("trim must be in [0, overlap/2] so trimmed tiles still meet")
    stride = tile - overlap
    return TilePlan(rows, cols, _axis_origins(rows, tile, stride), _axis_origins(cols, tile, stride), tile, overlap, trim)


def naive_plan(rows: int, cols: int, tile: int = 64) -> TilePlan:
    """Edge-to-edge tiles with no overlap and no trim."""
    return plan_tiles(rows, cols, tile, overlap=0, trim=0)


def stitch(plan: TilePlan, predict_tile, order=None) -> np.ndarray:
    """Accumulate retained tile predictions and divide by coverage.

    ``predict_tile(r0, c0)`` returns the tile x tile prediction. ``order``
    permutes the tile sequence; the result does not depend on it because
    every pixel's contributions are summed in plan order.
    """
    origins = plan.origins
    seq = range(len(origins)) if order is None else order
    tiles = {}
    for i in seq:
        tiles[i] = np.asarray(predict_tile(*origins[i]), dtype=np.float64)
    total = np.zeros((plan.rows, plan.cols))
    count = np.zeros((plan.rows, plan.cols))
    for i, (r0, c0) in enumerate(origins):
        rs, cs = plan.retained(r0, c0)
        total[r0 + rs.start : r0 + rs.stop, c0 + cs.start : c0 + cs.stop] += tiles[i][rs, cs]
        count[r0 + rs.start : r0 + rs.stop, c0 + cs.start : c0 + cs.stop] += 1
    if (count == 0).any():
        raise PlanError(f"{int((count == 0).sum())} pixels not covered by the tile plan")
    return total / count


def predict_tiled(
    checkpoint: ModelCheckpoint,
    stack: RasterGrid,
    plan: TilePlan | None = None,
    model=None,
    order=None,
) -> RasterGrid:
    """AGB raster (Mg/ha) from per-tile forwards stitched by ``plan``.

    The stack is standardized with the checkpoint's statistics and tiles are
    stitched with trim-then-average. Each tile is forwarded on its own: BLAS
    results can differ in the last bits with batch composition, which would
    make the map depend on tile order.
    """
    plan = plan or plan_tiles(stack.rows, stack.cols)
    model = model or checkpoint.build()
    x = standardize_apply(stack.values, checkpoint.stats, checkpoint.nodata).astype(model.dtype)
    t = plan.tile

    def forward(r, c):
        return predict_arrays(model, x[None, :, r : r + t, c : c + t], 1)[0, 0]

    agb = destandardize_labels(stitch(plan, forward, order), checkpoint.stats)
    return stack.like(agb[None], ["AGB"])


def ensemble(maps):
    """Per-pixel mean and population standard deviation across fold maps."""
    grids = list(maps)
    if not grids:
        raise ValueError("no maps to ensemble")
    arrays = [g.values if isinstance(g, RasterGrid) else np.asarray(g, dtype=np.float64) for g in grids]
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise ValueError(f"map shapes differ: {a.shape} vs {shape}")
    stacked = np.stack(arrays).astype(np.float64)
    # moments of deviations from the first map: identical maps give an
    # exact zero spread and the mean reproduces them bit for bit
    dev = stacked - stacked[0]
    shift = dev.mean(axis=0)
    mean = stacked[0] + shift
    std = np.sqrt(((dev - shift) ** 2).mean(axis=0))
    if isinstance(grids[0], RasterGrid):
        return grids[0].like(mean, ["AGB_mean"]), grids[0].like(std, ["AGB_std"])
    return mean, std


def apply_forest_mask(agb, mask, nodata=DEFAULT_NODATA):
    """Keep AGB where mask is 1; nodata where it is 0 (or mask nodata)."""
    values = agb.values if isinstance(agb, RasterGrid) else np.asarray(agb, dtype=np.float64)
    m = mask.values if isinstance(mask, RasterGrid) else np.asarray(mask, dtype=np.float64)
    m = m.reshape(m.shape[-2:])
    mask_nodata = mask.nodata if isinstance(mask, RasterGrid) else nodata
    if isinstance(agb, RasterGrid):
        nodata = agb.nodata
    bad = ~np.isin(m, (0.0, 1.0)) & ~(m == mask_nodata)
    if bad.any():
        raise ValueError(f"mask holds values other than 0, 1 and nodata: {np.unique(m[bad])[:5]}")
    if m.shape != values.shape[-2:]:
        raise ValueError(f"mask {m.shape} not co-registered with {values.shape[-2:]}")
    out = np.where(m == 1.0, values, nodata)
    return agb.like(out) if isinstance(agb, RasterGrid) else out


def seam_discontinuity(values, tile: int = 64) -> float:
    """Mean absolute jump across the internal borders of an edge-to-edge tiling.

    Compares each pixel pair straddling a border at multiples of ``tile``
    (vertical and horizontal borders pooled).
    """
    a = np.asarray(values, dtype=np.float64)
    a = a.reshape(a.shape[-2:])
    rows, cols = a.shape
    jumps = []
    for c in range(tile, cols, tile):
        jumps.append(np.abs(a[:, c] - a[:, c - 1]))
    for r in range(tile, rows, tile):
        jumps.append(np.abs(a[r, :] - a[r - 1, :]))
    if not jumps:
        raise ValueError("raster has no internal tile borders")
    return float(np.concatenate(jumps).mean())

"""Raw sources to the 29-band feature stack and sparse label raster."""

from __future__ import annotations

import numpy as np

from ..raster_io import RasterGrid
from .bands import (
    ConfigurationError,
    calibrate_palsar,
    db_ratio,
    focal_mean,
    latlon_planes,
    resample_bicubic,
    spectral_index,
    temporal_ndvi_stats,
)
from .dataset import ROSTER, stack_channels
from .footprints import filter_footprints, geolocation_filter, rasterize_footprints

S1_BANDS = ("VV", "VH")
S2_BANDS = ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12")
PALSAR_BANDS = ("HV", "HH")
TERRAIN_BANDS = ("LIA", "elevation", "slope")

# source name -> band names it must provide (None: any number of epochs)
SOURCES = {
    "s1": S1_BANDS,
    "s2": S2_BANDS,
    "ndvi_series": None,
    "palsar": PALSAR_BANDS,
    "terrain": TERRAIN_BANDS,
}


def _single(grid: RasterGrid, name: str) -> RasterGrid:
    return grid.like(grid.band(name)[None], [name])


def _check_sources(sources: dict) -> None:
    for key, bands in SOURCES.items():
        if key not in sources:
            raise ConfigurationError(f"missing source {key!r}")
        if bands is not None:
            absent = [b for b in bands if b not in sources[key].band_names]
            if absent:
                raise ConfigurationError(f"source {key!r} lacks bands {absent}")


def build_feature_stack(sources: dict, focal_radius: int = 1, palsar_factor: float = 1.0, roster=ROSTER) -> RasterGrid:
    """Derive every roster band from raw sources.

    ``sources`` maps ``s1`` (VV, VH in dB), ``s2`` (twelve L2A reflectance
    bands), ``ndvi_series`` (one NDVI band per epoch), ``palsar`` (HV, HH
    digital numbers) and ``terrain`` (LIA, elevation, slope) to grids.
    Sentinel-1 and PALSAR bands are focal-mean filtered; PALSAR DN are then
    calibrated to dB and resampled by ``palsar_factor`` (source / target
    pixel size) onto the 10 m grid.
    """
    _check_sources(sources)
    s1, s2 = sources["s1"], sources["s2"]
    vv = focal_mean(_single(s1, "VV"), focal_radius)
    vh = focal_mean(_single(s1, "VH"), focal_radius)
    epochs = [_single(sources["ndvi_series"], n) for n in sources["ndvi_series"].band_names]
    palsar = {}
    for name in PALSAR_BANDS:
        db = calibrate_palsar(focal_mean(_single(sources["palsar"], name), focal_radius))
        if palsar_factor != 1.0:
            db = resample_bicubic(db, palsar_factor)
        if (db.rows, db.cols) != (s2.rows, s2.cols):
            raise ConfigurationError(f"PALSAR {name} is {db.rows}x{db.cols} after resampling, grid is {s2.rows}x{s2.cols}")
        palsar[name] = s2.like(db.values, [name])
    parts = [
        vv,
        vh,
        s1.like(db_ratio(vv.values[0], vh.values[0], s1.nodata)[None], ["VV_VH"]),
        s2,
        spectral_index("NDVI", s2),
        spectral_index("kNDVI", s2),
        spectral_index("NDMI", s2),
        *temporal_ndvi_stats(epochs),
        palsar["HV"],
        palsar["HH"],
        s2.like(db_ratio(palsar["HV"].values[0], palsar["HH"].values[0], s2.nodata)[None], ["HV_HH"]),
        sources["terrain"],
        *latlon_planes(s2),
    ]
    return stack_channels(parts, roster)


def build_labels(footprints, stack: RasterGrid, geolocation: bool = True):
    """Quality and geolocation filtering followed by rasterization.

    Returns (label grid, retained footprints, list of FilterReport).
    """
    kept, report = filter_footprints(footprints)
    reports = [report]
    if geolocation:
        kndvi = stack.like(stack.band("kNDVI")[None], ["kNDVI"])
        hv = stack.like(stack.band("HV")[None], ["HV"])
        kept, geo = geolocation_filter(kept, kndvi, hv)
        reports.append(geo)
    labels = rasterize_footprints(kept, stack)
    return stack.like(np.asarray(labels, dtype=np.float64)[None], ["AGB_label"]), kept, reports

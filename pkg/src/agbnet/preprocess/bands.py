"""Per-pixel band derivations: SAR calibration, speckle smoothing, ratios,
spectral indices, temporal NDVI statistics, bicubic resampling and
coordinate planes.

Every function accepts either a bare 2-D array (with an explicit ``nodata``)
or a single-band :class:`RasterGrid`; grids come back as grids.
"""

from __future__ import annotations

import logging

import numpy as np

from ..raster_io import DEFAULT_NODATA, RasterGrid

log = logging.getLogger(__name__)

PALSAR_CALIBRATION_DB = -83.0

# aliases accepted by spectral_index for the generic reflectance names
_BAND_ALIASES = {
    "NIR": ("NIR", "B8"),
    "Red": ("Red", "RED", "B4"),
    "SWIR": ("SWIR", "SWIR1", "B11"),
}


class ConfigurationError(ValueError):
    pass


def _unwrap(band, nodata):
    if isinstance(band, RasterGrid):
        if band.bands != 1:
            raise ValueError(f"expected a single-band grid, got {band.bands} bands")
        return band.values[0].astype(np.float64), band.nodata, band
    return np.asarray(band, dtype=np.float64), nodata, None


def _rewrap(values, nodata, template, name=None):
    if template is None:
        return values
    names = [name] if name else template.band_names
    return template.like(values[None], names)


def _valid(values, nodata):
    return np.isfinite(values) & (values != nodata)


def calibrate_palsar(dn, nodata=DEFAULT_NODATA, return_count=False):
    """Digital numbers to gamma-naught in dB: 10*log10(DN^2) + CF, CF = -83 dB.

    Non-positive (or nodata) DN becomes nodata.
    """
    values, nodata, tmpl = _unwrap(dn, nodata)
    ok = _valid(values, nodata) & (values > 0)
    out = np.full(values.shape, nodata, dtype=np.float64)
    out[ok] = 10.0 * np.log10(values[ok] ** 2) + PALSAR_CALIBRATION_DB
    dropped = int(values.size - ok.sum())
    if dropped:
        log.info("calibrate_palsar: %d non-positive or nodata pixels set to nodata", dropped)
    out = _rewrap(out, nodata, tmpl)
    return (out, dropped) if return_count else out


def _box_sum(a, r):
    """Sum over a (2r+1)^2 window clipped at the array border."""
    c = np.pad(a, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    h, w = a.shape
    i = np.arange(h)
    j = np.arange(w)
    i0 = np.clip(i - r, 0, h)[:, None]
    i1 = np.clip(i + r + 1, 0, h)[:, None]
    j0 = np.clip(j - r, 0, w)[None, :]
    j1 = np.clip(j + r + 1, 0, w)[None, :]
    return c[i1, j1] - c[i0, j1] - c[i1, j0] + c[i0, j0]


def focal_mean(band, radius: int = 1, nodata=DEFAULT_NODATA):
    """Mean over the (2r+1)^2 neighbourhood, clipped at the grid edge and
    ignoring nodata. A window with no valid pixel yields nodata."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    values, nodata, tmpl = _unwrap(band, nodata)
    ok = _valid(values, nodata)
    total = _box_sum(np.where(ok, values, 0.0), radius)
    count = _box_sum(ok.astype(np.float64), radius)
    out = np.full(values.shape, nodata, dtype=np.float64)
    has = count > 0
    out[has] = total[has] / count[has]
    return _rewrap(out, nodata, tmpl)


def db_ratio(a_db, b_db, nodata=DEFAULT_NODATA):
    """Ratio of two backscatter bands expressed in dB, i.e. a_db - b_db."""
    a, nodata, tmpl = _unwrap(a_db, nodata)
    b, _, _ = _unwrap(b_db, nodata)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ok = _valid(a, nodata) & _valid(b, nodata)
    out = np.full(a.shape, nodata, dtype=np.float64)
    out[ok] = a[ok] - b[ok]
    if tmpl is not None:
        name = f"{tmpl.band_names[0]}_{b_db.band_names[0]}" if isinstance(b_db, RasterGrid) else None
        return _rewrap(out, nodata, tmpl, name)
    return out


def _lookup(bands, key):
    for alias in _BAND_ALIASES[key]:
        if alias in bands:
            return bands[alias]
    raise ConfigurationError(f"spectral index needs band {key} (any of {_BAND_ALIASES[key]})")


def _normalized_difference(p, q, nodata):
    ok = _valid(p, nodata) & _valid(q, nodata)
    den = p + q
    ok &= den != 0
    out = np.full(p.shape, nodata, dtype=np.float64)
    out[ok] = (p[ok] - q[ok]) / den[ok]
    return out


def spectral_index(kind: str, bands, nodata=DEFAULT_NODATA):
    """NDVI, kNDVI (= tanh(NDVI^2)) or NDMI from a mapping of named planes.

    ``bands`` may be a dict of arrays or a RasterGrid holding the needed
    bands. Zero denominators give nodata.
    """
    tmpl = None
    if isinstance(bands, RasterGrid):
        tmpl, nodata = bands, bands.nodata
        bands = {n: bands.values[i].astype(np.float64) for i, n in enumerate(bands.band_names)}
    else:
        bands = {k: np.asarray(v, dtype=np.float64) for k, v in bands.items()}
    nir = _lookup(bands, "NIR")
    if kind in ("NDVI", "kNDVI"):
        out = _normalized_difference(nir, _lookup(bands, "Red"), nodata)
        if kind == "kNDVI":
            ok = out != nodata
            out[ok] = np.tanh(out[ok] ** 2)
    elif kind == "NDMI":
        out = _normalized_difference(nir, _lookup(bands, "SWIR"), nodata)
    else:
        raise ConfigurationError(f"unknown index {kind!r}")
    if tmpl is not None:
        return tmpl.like(out[None], [kind])
    return out


def temporal_ndvi_stats(ndvi_stack, nodata=DEFAULT_NODATA):
    """Per-pixel (min, max, max - min) across epochs, skipping nodata epochs."""
    if len(ndvi_stack) == 0:
        raise ValueError("empty NDVI stack")
    tmpl = ndvi_stack[0] if isinstance(ndvi_stack[0], RasterGrid) else None
    if tmpl is not None:
        nodata = tmpl.nodata
    arr = np.stack([_unwrap(b, nodata)[0] for b in ndvi_stack])
    ok = _valid(arr, nodata)
    any_ok = ok.any(axis=0)
    lo = np.where(ok, arr, np.inf).min(axis=0)
    hi = np.where(ok, arr, -np.inf).max(axis=0)
    lo = np.where(any_ok, lo, nodata)
    hi = np.where(any_ok, hi, nodata)
    diff = np.where(any_ok, hi - lo, nodata)
    if tmpl is not None:
        return tuple(
            tmpl.like(v[None], [n])
            for v, n in ((lo, "NDVI_min"), (hi, "NDVI_max"), (diff, "NDVI_diff"))
        )
    return lo, hi, diff


def _keys_weights(t, a=-0.5):
    """Keys cubic-convolution weights for the 4 taps at offsets -1, 0, 1, 2."""
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    ad = np.abs(d)
    near = (a + 2) * ad**3 - (a + 3) * ad**2 + 1
    far = a * ad**3 - 5 * a * ad**2 + 8 * a * ad - 4 * a
    return np.where(ad <= 1, near, np.where(ad < 2, far, 0.0))


def resample_bicubic(band, factor: float, nodata=DEFAULT_NODATA):
    """Resample by ``factor`` = source pixel size / target pixel size.

    Keys bicubic (a = -0.5), clamped edge coordinates. Pixel centres are
    aligned so the outer edges of both grids coincide; a pixel whose 4x4
    support touches nodata becomes nodata.
    """
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    values, nodata, tmpl = _unwrap(band, nodata)
    h, w = values.shape
    oh, ow = int(round(h * factor)), int(round(w * factor))
    if oh == 0 or ow == 0:
        raise ValueError("resampling produces an empty grid")

    def axis(n_out, n_in):
        src = (np.arange(n_out) + 0.5) / factor - 0.5
        base = np.floor(src).astype(int)
        idx = np.clip(base[:, None] + np.arange(-1, 3)[None, :], 0, n_in - 1)
        return idx, _keys_weights(src - base)

    ri, rw = axis(oh, h)
    ci, cw = axis(ow, w)
    ok = _valid(values, nodata)
    filled = np.where(ok, values, 0.0)
    # separable: rows first, then columns
    tmp = np.einsum("ok,okw->ow", rw, filled[ri])
    out = np.einsum("pk,opk->op", cw, tmp[:, ci])
    bad = np.einsum("ok,okw->ow", np.ones_like(rw), (~ok)[ri].astype(np.float64))
    bad = np.einsum("pk,opk->op", np.ones_like(cw), bad[:, ci]) > 0
    out[bad] = nodata
    if tmpl is None:
        return out
    px = (tmpl.pixel_size[0] / factor, tmpl.pixel_size[1] / factor)
    return RasterGrid(out[None], tmpl.band_names, tmpl.origin, px, nodata, tmpl.crs)


def latlon_planes(grid: RasterGrid):
    """Coordinate planes of pixel centres as (lat, lon) bands.

    For a geographic CRS these are latitude/longitude in degrees; for a
    projected CRS they are northing/easting in map units (no reprojection).
    """
    x, y = grid.pixel_centers()
    lat = np.broadcast_to(y[:, None], (grid.rows, grid.cols)).astype(np.float64)
    lon = np.broadcast_to(x[None, :], (grid.rows, grid.cols)).astype(np.float64)
    return (
        grid.like(lat[None], ["lat"]),
        grid.like(lon[None], ["lon"]),
    )

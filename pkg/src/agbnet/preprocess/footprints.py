"""Footprint-level processing: biomass allometry, quality and geolocation
filtering, label rasterization and area-weighted footprint means."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..raster_io import LABEL_SENTINEL, FootprintRecord, RasterGrid

AGB_COEF = 5.58
AGB_EXP = 1.12

# (rule name, predicate that is True when the record FAILS), checked in order
QUALITY_RULES = (
    ("daytime", lambda r: not r.solar_elevation < 0),
    ("degraded", lambda r: r.degrade_flag == 1),
    ("low_quality", lambda r: r.quality_flag == 0),
    ("coverage_beam", lambda r: r.beam_type != "power"),
    ("sensitivity_low_cover", lambda r: _low_cover(r) and not r.sensitivity >= 0.9),
    ("sensitivity_high_cover", lambda r: not _low_cover(r) and not r.sensitivity >= 0.98),
)

HV_RESIDUAL_DB = 2.5
# cover-vs-kNDVI distances this close to the cut-off count as equal (float noise)
_DIST_TOL = 1e-9


def _low_cover(r):
    # a missing canopy cover falls under the stricter high-cover threshold
    return r.canopy_cover < 0.8


class FootprintGeometryError(ValueError):
    pass


@dataclass
class FilterReport:
    input_count: int
    removed_by_rule: dict = field(default_factory=dict)
    output_count: int = 0
    flags: list = field(default_factory=list)

    def check(self) -> None:
        removed = sum(self.removed_by_rule.values())
        assert self.output_count + removed == self.input_count, (self.output_count, removed)

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "removed_by_rule": dict(self.removed_by_rule),
            "output_count": self.output_count,
            "flags": list(self.flags),
        }

    def merged(self, other: "FilterReport") -> "FilterReport":
        """Chain ``other`` (run on this report's output) after this one."""
        removed = dict(self.removed_by_rule)
        for k, v in other.removed_by_rule.items():
            removed[k] = removed.get(k, 0) + v
        return FilterReport(self.input_count, removed, other.output_count, self.flags + other.flags)


def agb_from_rh80(rh80):
    """AGB (Mg/ha) = 5.58 * RH80^1.12."""
    rh = np.asarray(rh80, dtype=np.float64)
    if np.any(rh < 0):
        raise ValueError("rh80 must be non-negative")
    out = AGB_COEF * rh**AGB_EXP
    return float(out) if out.ndim == 0 else out


def rh80_from_agb(agb):
    """Inverse allometry: RH80 = (AGB / 5.58)^(1 / 1.12)."""
    a = np.asarray(agb, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("agb must be non-negative")
    out = (a / AGB_COEF) ** (1.0 / AGB_EXP)
    return float(out) if out.ndim == 0 else out


def filter_footprints(records, rules=QUALITY_RULES):
    """Keep records that pass every rule; removals go to the first failing rule."""
    report = FilterReport(len(records), {name: 0 for name, _ in rules})
    kept = []
    for r in records:
        for name, fails in rules:
            if fails(r):
                report.removed_by_rule[name] += 1
                break
        else:
            kept.append(r)
    report.output_count = len(kept)
    report.check()
    return kept, report


def geolocation_filter(records, kndvi_band, hv_band):
    """Two-stage geolocation screen.

    Stage one drops footprints whose |canopy cover - footprint kNDVI| lies
    more than one (population) standard deviation above the mean distance.
    Stage two fits HV_dB = a + b*log10(RH98) by least squares over the
    survivors and drops those with |residual| > 2.5 dB. Footprints with
    RH98 <= 0 do not enter the fit and are kept.
    """
    report = FilterReport(len(records), {"cover_kndvi_mismatch": 0, "hv_curve_outlier": 0})
    if not records:
        report.output_count = 0
        return [], report

    kndvi = np.array([footprint_mean(kndvi_band, r)[0] for r in records])
    cover = np.array([r.canopy_cover for r in records])
    d = np.abs(cover - kndvi)
    cut = d.mean() + d.std()
    keep1 = d <= cut + _DIST_TOL
    report.removed_by_rule["cover_kndvi_mismatch"] = int((~keep1).sum())
    survivors = [r for r, k in zip(records, keep1) if k]

    rh98 = np.array([r.rh98 for r in survivors], dtype=np.float64)
    usable = np.isfinite(rh98) & (rh98 > 0)
    if usable.sum() < 3 or np.ptp(rh98[usable]) == 0:
        report.flags.append("degenerate_fit")
        report.output_count = len(survivors)
        report.check()
        return survivors, report

    hv = np.array([footprint_mean(hv_band, r)[0] for r in survivors])
    x = np.log10(rh98[usable])
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, hv[usable], rcond=None)
    resid = np.zeros(len(survivors))
    resid[usable] = hv[usable] - design @ coef
    keep2 = np.abs(resid) <= HV_RESIDUAL_DB
    report.removed_by_rule["hv_curve_outlier"] = int((~keep2).sum())
    kept = [r for r, k in zip(survivors, keep2) if k]
    report.output_count = len(kept)
    report.flags.append(f"hv_fit:a={coef[0]:.6g},b={coef[1]:.6g}")
    report.check()
    return kept, report


def rasterize_footprints(records, grid: RasterGrid) -> np.ndarray:
    """Label plane: AGB of the footprint whose disc contains the pixel centre,
    nearest centre winning on overlap, LABEL_SENTINEL elsewhere."""
    labels = np.full((grid.rows, grid.cols), LABEL_SENTINEL, dtype=np.float64)
    best = np.full((grid.rows, grid.cols), np.inf)
    xs, ys = grid.pixel_centers()
    for r in records:
        c0, r0 = grid.to_pixel(r.center_x - r.radius, r.center_y + r.radius)
        c1, r1 = grid.to_pixel(r.center_x + r.radius, r.center_y - r.radius)
        cs = slice(max(int(math.floor(c0)) - 1, 0), min(int(math.ceil(c1)) + 1, grid.cols))
        rs = slice(max(int(math.floor(r0)) - 1, 0), min(int(math.ceil(r1)) + 1, grid.rows))
        if cs.start >= cs.stop or rs.start >= rs.stop:
            continue
        dist = np.hypot(xs[cs][None, :] - r.center_x, ys[rs][:, None] - r.center_y)
        hit = (dist <= r.radius) & (dist < best[rs, cs])
        if hit.any():
            agb = agb_from_rh80(r.rh80)
            labels[rs, cs][hit] = agb
            best[rs, cs][hit] = dist[hit]
    return labels


def _circle_primitive(t, r):
    """Antiderivative of sqrt(r^2 - t^2) on [-r, r]."""
    t = min(max(t, -r), r)
    return 0.5 * (t * math.sqrt(max(r * r - t * t, 0.0)) + r * r * math.asin(t / r))


def _disc_rect_area(x0, x1, y0, y1, r):
    """Exact area of the disc of radius r at the origin intersected with
    the rectangle [x0, x1] x [y0, y1]."""
    x0, x1 = max(x0, -r), min(x1, r)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    # breakpoints where the chord half-height h(t) crosses |y0| or |y1|
    cuts = {x0, x1}
    for y in (y0, y1):
        if abs(y) < r:
            t = math.sqrt(r * r - y * y)
            cuts.update((-t, t))
    pts = sorted(c for c in cuts if x0 <= c <= x1)
    area = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        m = 0.5 * (a + b)
        h = math.sqrt(max(r * r - m * m, 0.0))
        top_is_y1 = y1 < h
        bot_is_y0 = y0 > -h
        if min(y1, h) <= max(y0, -h):
            continue
        circ = _circle_primitive(b, r) - _circle_primitive(a, r)
        width = b - a
        top = y1 * width if top_is_y1 else circ
        bot = y0 * width if bot_is_y0 else -circ
        area += top - bot
    return area


def footprint_weights(grid: RasterGrid, footprint: FootprintRecord):
    """Pixels overlapped by a footprint disc and their exact overlap areas.

    Returns (rows, cols, areas) for pixels with positive overlap.
    """
    dx, dy = grid.pixel_size[0], -grid.pixel_size[1]
    cx, cy, rad = footprint.center_x, footprint.center_y, footprint.radius
    c0, r0 = grid.to_pixel(cx - rad, cy + rad)
    c1, r1 = grid.to_pixel(cx + rad, cy - rad)
    rows, cols, areas = [], [], []
    for i in range(max(int(math.floor(r0)), 0), min(int(math.ceil(r1)), grid.rows)):
        top = grid.origin[1] - i * dy
        for j in range(max(int(math.floor(c0)), 0), min(int(math.ceil(c1)), grid.cols)):
            left = grid.origin[0] + j * dx
            a = _disc_rect_area(left - cx, left + dx - cx, top - dy - cy, top - cy, rad)
            if a > 0:
                rows.append(i)
                cols.append(j)
                areas.append(a)
    return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(areas)


def footprint_mean(stack, footprint: FootprintRecord, values=None) -> np.ndarray:
    """Area-weighted per-band mean of ``stack`` over the footprint disc.

    ``values`` optionally overrides the pixel data (shape bands x rows x
    cols, or rows x cols) while keeping the stack's georeferencing. Nodata
    pixels drop out and the remaining weights are renormalised per band.
    """
    rows, cols, areas = footprint_weights(stack, footprint)
    if areas.sum() <= 0:
        raise FootprintGeometryError(f"footprint {footprint.id} does not intersect the grid")
    v = stack.values if values is None else np.asarray(values)
    if v.ndim == 2:
        v = v[None]
    px = v[:, rows, cols].astype(np.float64)
    ok = np.isfinite(px) & (px != stack.nodata)
    w = np.where(ok, areas[None, :], 0.0)
    tot = w.sum(axis=1)
    out = np.full(v.shape[0], np.nan)
    has = tot > 0
    out[has] = (np.where(ok, px, 0.0) * w).sum(axis=1)[has] / tot[has]
    return out

"""Seeded synthetic landscapes with known biomass and GEDI-like sampling.

The generator draws a smooth latent field, maps it to AGB in [0, 300]
Mg/ha and renders every roster band as a noisy, nonlinear response to
biomass. Indices, ratios, calibration and coordinate planes go through the
same preprocessing functions used on real data. Two properties matter to
the benchmarks built on it:

* per-pixel noise is independent, so spatial context (averaging over a
  neighbourhood) recovers biomass better than any single pixel;
* the B8A band carries a texture whose amplitude scales with AGB but whose
  sign is random per pixel, so it is readable from local contrast but
  averages out in a footprint mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .preprocess.bands import PALSAR_CALIBRATION_DB, spectral_index
from .preprocess.dataset import ROSTER
from .preprocess.footprints import QUALITY_RULES, footprint_mean, rh80_from_agb
from .preprocess.pipeline import PALSAR_BANDS, S1_BANDS, TERRAIN_BANDS, build_feature_stack
from .raster_io import FootprintRecord, RasterGrid

AGB_MAX = 300.0
FOREST_THRESHOLD = 20.0  # Mg/ha


@dataclass
class SynthSpec:
    rows: int = 512
    cols: int = 512
    n_channels: int = 29
    seed: int = 0
    correlation_length: float = 10.0  # pixels
    noise_std: float = 10.0  # Mg/ha, added to footprint AGB
    feature_noise: float = 4.0  # multiplier on every band's pixel noise
    footprint_spacing: float = 60.0  # m along track
    track_spacing: float = 150.0  # m between tracks
    footprint_radius: float = 12.5
    fail_fraction: float = 0.15  # footprints built to fail one quality rule
    pixel_size: float = 10.0
    origin_x: float = 500000.0
    origin_y: float = 2500000.0
    crs: str = "EPSG:32650"

    def validate(self) -> None:
        if self.correlation_length < 1:
            raise ValueError("correlation_length must be >= 1")
        if self.noise_std < 0 or self.feature_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.n_channels != len(ROSTER):
            raise ValueError(f"the generator renders the {len(ROSTER)}-band roster")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _smooth_field(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / f.std()


def _template(spec: SynthSpec) -> RasterGrid:
    return RasterGrid(
        np.zeros((1, spec.rows, spec.cols)),
        ["template"],
        (spec.origin_x, spec.origin_y),
        (spec.pixel_size, -spec.pixel_size),
        crs=spec.crs,
    )


def generate_sources(spec: SynthSpec):
    """Raw sources (see ``build_feature_stack``), true AGB and forest mask."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = (spec.rows, spec.cols)
    tmpl = _template(spec)
    k = spec.feature_noise

    coarse = _smooth_field(rng, shape, spec.correlation_length)
    fine = _smooth_field(rng, shape, spec.correlation_length / 3)
    latent = (coarse + 0.4 * fine) / math.hypot(1.0, 0.4)
    agb = AGB_MAX / (1.0 + np.exp(-(1.4 * latent - 0.25)))
    a = agb / AGB_MAX

    def noise(scale):
        return k * scale * rng.standard_normal(shape)

    elevation = 400 + 250 * _smooth_field(rng, shape, 3 * spec.correlation_length)
    gy, gx = np.gradient(elevation, spec.pixel_size)
    slope = np.degrees(np.arctan(np.hypot(gx, gy)))
    lia = 38 + 0.5 * slope + 4 * _smooth_field(rng, shape, spec.correlation_length) + noise(1.0)

    # Sentinel-1, dB
    vv = -12.0 + 4.0 * a + 0.3 * (slope / 10) + noise(2.0)
    vh = -20.0 + 5.0 * a**0.7 + noise(2.0)

    # Sentinel-2 reflectance; B8A carries the sign-random texture cue
    texture = rng.choice([-1.0, 1.0], size=shape)
    refl = {
        "B1": 0.08 - 0.03 * a + noise(0.012),
        "B2": 0.09 - 0.04 * a + noise(0.012),
        "B3": 0.10 - 0.04 * a + noise(0.012),
        "B4": 0.13 - 0.09 * a**0.8 + noise(0.015),
        "B5": 0.15 - 0.04 * a + noise(0.015),
        "B6": 0.20 + 0.08 * a + noise(0.02),
        "B7": 0.22 + 0.12 * a + noise(0.02),
        "B8": 0.22 + 0.16 * a**0.8 + noise(0.025),
        "B8A": 0.23 + 0.05 * a + 0.08 * a * texture + noise(0.01),
        "B9": 0.10 + 0.01 * _smooth_field(rng, shape, 2 * spec.correlation_length) + noise(0.01),
        "B11": 0.26 - 0.10 * a + noise(0.02),
        "B12": 0.17 - 0.09 * a + noise(0.02),
    }
    refl = {b: np.clip(v, 0.005, 0.9) for b, v in refl.items()}
    s2 = tmpl.like(np.stack(list(refl.values())), list(refl))
    ndvi = spectral_index("NDVI", s2).values[0]
    epochs = []
    for t in range(4):
        phase = math.sin(2 * math.pi * (t + 0.5) / 4)
        epochs.append(ndvi + 0.25 * (1 - a) * phase + noise(0.03))

    # PALSAR-2 digital numbers, gamma-naught set by canopy height
    rh98 = 1.2 * rh80_from_agb(agb) + 1.0
    hv_db = -24.0 + 7.0 * np.log10(rh98) + noise(1.0)
    hh_db = -14.0 + 3.0 * np.log10(rh98) + noise(1.0)
    dn = 10 ** ((np.stack([hv_db, hh_db]) - PALSAR_CALIBRATION_DB) / 20.0)

    sources = {
        "s1": tmpl.like(np.stack([vv, vh]), list(S1_BANDS)),
        "s2": s2,
        "ndvi_series": tmpl.like(np.stack(epochs), [f"NDVI_t{t}" for t in range(4)]),
        "palsar": tmpl.like(dn, list(PALSAR_BANDS)),
        "terrain": tmpl.like(np.stack([lia, elevation, slope]), list(TERRAIN_BANDS)),
    }
    truth = tmpl.like(agb[None], ["AGB"])
    mask = tmpl.like((agb >= FOREST_THRESHOLD).astype(np.float64)[None], ["forest"])
    return sources, truth, mask


def generate_landscape(spec: SynthSpec):
    """Return (29-band feature stack, true AGB raster, forest mask raster)."""
    sources, truth, mask = generate_sources(spec)
    return build_feature_stack(sources), truth, mask


def _fields_for(rule, rng, cover):
    """Quality fields that pass every rule, or fail exactly ``rule``."""
    f = dict(
        solar_elevation=float(rng.uniform(-60, -1)),
        degrade_flag=0,
        quality_flag=1,
        beam_type="power",
        sensitivity=float(rng.uniform(0.98, 1.0) if cover >= 0.8 else rng.uniform(0.9, 1.0)),
    )
    if rule == "daytime":
        f["solar_elevation"] = float(rng.uniform(0, 60))
    elif rule == "degraded":
        f["degrade_flag"] = 1
    elif rule == "low_quality":
        f["quality_flag"] = 0
    elif rule == "coverage_beam":
        f["beam_type"] = "coverage"
    elif rule == "sensitivity_low_cover":
        f["sensitivity"] = float(rng.uniform(0.5, 0.9 - 1e-6))
    elif rule == "sensitivity_high_cover":
        f["sensitivity"] = float(rng.uniform(0.9, 0.98 - 1e-6))
    return f


def sample_footprints(truth: RasterGrid, spec: SynthSpec, kndvi: RasterGrid | None = None, return_design=False):
    """GEDI-like footprints on north-south tracks.

    Footprint AGB is the area-weighted mean of the truth under the disc plus
    Gaussian noise (``noise_std``), clipped at 0; RH80 is back-solved through
    the inverse allometry. A ``fail_fraction`` share is built to fail exactly
    one quality rule (chosen uniformly); ``return_design`` also returns that
    rule (or None) per footprint.
    """
    rng = np.random.default_rng([spec.seed, 7])
    x0, y0 = truth.origin
    width = truth.cols * truth.pixel_size[0]
    height = truth.rows * -truth.pixel_size[1]
    r = spec.footprint_radius
    margin = r + 1.0
    records, design = [], []
    offset = rng.uniform(0, spec.track_spacing)
    tx = x0 + margin + offset
    rule_names = [name for name, _ in QUALITY_RULES]
    n = 0
    while tx <= x0 + width - margin:
        start = rng.uniform(0, spec.footprint_spacing)
        ty = y0 - margin - start
        while ty >= y0 - height + margin:
            rec = FootprintRecord(id=f"fp{n:06d}", center_x=float(tx), center_y=float(ty), radius=r)
            true_agb = float(footprint_mean(truth, rec)[0])
            agb = max(true_agb + spec.noise_std * rng.standard_normal(), 0.0)
            rec.rh80 = float(rh80_from_agb(agb))
            rec.rh98 = 1.2 * rec.rh80 + 1.0
            if kndvi is not None:
                cover = float(footprint_mean(kndvi, rec)[0])
            else:
                cover = min(agb / AGB_MAX, 1.0) * 0.9
            rec.canopy_cover = float(np.clip(cover + 0.02 * rng.standard_normal(), 0.0, 1.0))
            rule = None
            if rng.uniform() < spec.fail_fraction:
                candidates = [
                    x for x in rule_names
                    if not (x == "sensitivity_low_cover" and rec.canopy_cover >= 0.8)
                    and not (x == "sensitivity_high_cover" and rec.canopy_cover < 0.8)
                ]  # fmt: skip
                rule = candidates[rng.integers(len(candidates))]
            for key, val in _fields_for(rule, rng, rec.canopy_cover).items():
                setattr(rec, key, val)
            rec.extra["true_agb"] = true_agb
            records.append(rec)
            design.append(rule)
            n += 1
            ty -= spec.footprint_spacing
        tx += spec.track_spacing
    return (records, design) if return_design else records

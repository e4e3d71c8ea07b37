import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agbnet.preprocess.footprints import (
    FootprintGeometryError,
    agb_from_rh80,
    filter_footprints,
    footprint_mean,
    footprint_weights,
    geolocation_filter,
    rasterize_footprints,
    rh80_from_agb,
)
from agbnet.raster_io import LABEL_SENTINEL, FootprintRecord, RasterGrid


def _good(**kw):
    base = dict(id="x", center_x=0.0, center_y=0.0, rh80=10.0, rh98=12.0, canopy_cover=0.5,
                sensitivity=0.92, quality_flag=1, degrade_flag=0, solar_elevation=-10.0, beam_type="power")
    base.update(kw)
    return FootprintRecord(**base)


class TestAllometry:
    @pytest.mark.parametrize("rh80, agb", [(0.0, 0.0), (10.0, 73.56), (20.0, 159.90)])
    def test_spot_values(self, rh80, agb):
        assert math.isclose(agb_from_rh80(rh80), agb, rel_tol=1e-3, abs_tol=1e-12)

    def test_high_precision_oracle(self):
        # exp/log route versus the power form
        for rh in (10.0, 20.0, 33.3):
            assert math.isclose(agb_from_rh80(rh), 5.58 * math.exp(1.12 * math.log(rh)), rel_tol=1e-13)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            agb_from_rh80(-1.0)

    @given(st.floats(0, 80))
    def test_inverse_round_trip(self, rh):
        assert math.isclose(rh80_from_agb(agb_from_rh80(rh)), rh, rel_tol=1e-9, abs_tol=1e-9)

    def test_inverse_at_159_90(self):
        assert abs(rh80_from_agb(agb_from_rh80(20.0)) - 20.0) < 1e-6


class TestQualityFilter:
    @pytest.mark.parametrize(
        "record, kept, rule",
        [
            (_good(solar_elevation=5.0), False, "daytime"),
            (_good(canopy_cover=0.85, sensitivity=0.95), False, "sensitivity_high_cover"),
            (_good(), True, None),
            (_good(degrade_flag=1), False, "degraded"),
            (_good(quality_flag=0), False, "low_quality"),
            (_good(beam_type="coverage"), False, "coverage_beam"),
            (_good(sensitivity=0.85), False, "sensitivity_low_cover"),
            (_good(canopy_cover=0.9, sensitivity=0.99), True, None),
        ],
    )
    def test_single_record(self, record, kept, rule):
        out, report = filter_footprints([record])
        assert bool(out) == kept
        if rule:
            assert report.removed_by_rule[rule] == 1
        assert report.output_count + sum(report.removed_by_rule.values()) == 1

    def test_first_failing_rule_attribution(self):
        _, report = filter_footprints([_good(solar_elevation=5.0, degrade_flag=1, quality_flag=0)])
        assert report.removed_by_rule["daytime"] == 1
        assert report.removed_by_rule["degraded"] == 0

    @given(st.lists(st.tuples(
        st.floats(-30, 30), st.integers(0, 1), st.integers(0, 1), st.booleans(),
        st.floats(0, 1), st.floats(0.8, 1)), max_size=30))
    def test_idempotent(self, rows):
        recs = [_good(id=str(i), solar_elevation=s, quality_flag=q, degrade_flag=d,
                      beam_type="power" if p else "coverage", canopy_cover=c, sensitivity=v)
                for i, (s, q, d, p, c, v) in enumerate(rows)]
        once, _ = filter_footprints(recs)
        twice, report = filter_footprints(once)
        assert once == twice
        assert sum(report.removed_by_rule.values()) == 0


def _curve_setup(n=30, outlier=None, a=-20.0, b=8.0):
    """Footprints 100 m apart on one row, each over its own 5x5 pixel block."""
    rng = np.random.default_rng(1)
    grid = RasterGrid(np.zeros((1, 10, 10 * n)), ["hv"], (0.0, 100.0), (10.0, -10.0))
    hv = np.zeros((10, 10 * n))
    records = []
    for i in range(n):
        rh98 = float(rng.uniform(5, 40))
        val = a + b * math.log10(rh98) + (5.0 if i == outlier else 0.0)
        hv[:, 10 * i : 10 * i + 10] = val
        records.append(_good(id=f"f{i}", center_x=100.0 * i + 50.0, center_y=50.0, rh80=rh98 / 1.2, rh98=rh98))
    return records, grid.like(np.full((1, 10, 10 * n), 0.5), ["kNDVI"]), grid.like(hv[None], ["HV"])


class TestGeolocationFilter:
    def test_identical_distance_keeps_all(self):
        recs, kndvi, hv = _curve_setup()
        kept, report = geolocation_filter(recs, kndvi, hv)
        assert report.removed_by_rule["cover_kndvi_mismatch"] == 0
        assert len(kept) == len(recs)

    def test_constructed_outlier_removed(self):
        recs, kndvi, hv = _curve_setup(outlier=7)
        kept, report = geolocation_filter(recs, kndvi, hv)
        assert [r.id for r in recs if r not in kept] == ["f7"]
        assert report.removed_by_rule == {"cover_kndvi_mismatch": 0, "hv_curve_outlier": 1}

    def test_two_records_degenerate(self):
        recs, kndvi, hv = _curve_setup(n=2)
        kept, report = geolocation_filter(recs, kndvi, hv)
        assert len(kept) == 2 and "degenerate_fit" in report.flags

    def test_cover_mismatch_stage(self):
        recs, kndvi, hv = _curve_setup(n=10)
        recs[3].canopy_cover = 0.99
        kept, report = geolocation_filter(recs, kndvi, hv)
        assert report.removed_by_rule["cover_kndvi_mismatch"] == 1
        assert recs[3] not in kept


def _grid(rows=20, cols=20, values=None):
    v = np.zeros((1, rows, cols)) if values is None else np.asarray(values, dtype=float)[None]
    return RasterGrid(v, ["v"], (0.0, 10.0 * rows), (10.0, -10.0))


class TestRasterize:
    def test_no_footprints(self):
        assert np.all(rasterize_footprints([], _grid()) == LABEL_SENTINEL)

    def test_five_pixel_cross(self):
        g = _grid()
        labels = rasterize_footprints([_good(center_x=55.0, center_y=145.0, radius=12.5, rh80=20.0)], g)
        hit = np.argwhere(labels >= 0)
        assert len(hit) == 5
        assert {tuple(p) for p in hit} == {(5, 5), (4, 5), (6, 5), (5, 4), (5, 6)}
        assert math.isclose(labels[5, 5], agb_from_rh80(20.0))

    def test_overlap_nearest_wins(self):
        g = _grid()
        a = _good(id="a", center_x=55.0, center_y=145.0, rh80=10.0)
        b = _good(id="b", center_x=72.0, center_y=145.0, rh80=20.0)
        labels = rasterize_footprints([a, b], g)
        # pixel (5, 6) centre at x=65: 10 m from a, 7 m from b
        assert math.isclose(labels[5, 6], agb_from_rh80(20.0))
        assert math.isclose(labels[5, 5], agb_from_rh80(10.0))

    def test_count_matches_geometry_oracle(self):
        rng = np.random.default_rng(5)
        g = _grid(64, 64)
        xs, ys = g.pixel_centers()
        for _ in range(1000):
            fp = _good(center_x=float(rng.uniform(-20, 660)), center_y=float(rng.uniform(-20, 660)), radius=float(rng.uniform(3, 30)))
            labels = rasterize_footprints([fp], g)
            inside = np.hypot(xs[None, :] - fp.center_x, ys[:, None] - fp.center_y) <= fp.radius
            assert (labels >= 0).sum() == inside.sum()
            assert np.all((labels >= 0) == inside)


class TestFootprintMean:
    def test_disc_inside_one_pixel(self):
        values = np.arange(400, dtype=float).reshape(20, 20)
        g = _grid(values=values)
        fp = _good(center_x=55.0, center_y=145.0, radius=2.0)
        assert footprint_mean(g, fp)[0] == values[5, 5]

    def test_disc_on_shared_corner(self):
        g = _grid(values=np.full((20, 20), 7.5))
        fp = _good(center_x=50.0, center_y=150.0, radius=12.5)
        assert math.isclose(footprint_mean(g, fp)[0], 7.5)
        rows, cols, areas = footprint_weights(g, fp)
        assert math.isclose(areas.sum(), math.pi * 12.5**2, rel_tol=1e-12)

    def test_monte_carlo_oracle(self):
        values = np.full((20, 20), 10.0)
        values[:, 6:] = 20.0
        g = _grid(values=values)
        fp = _good(center_x=57.0, center_y=143.0, radius=12.5)
        rng = np.random.default_rng(9)
        n = 1_000_000
        r = fp.radius * np.sqrt(rng.uniform(size=n))
        t = rng.uniform(0, 2 * np.pi, n)
        px = fp.center_x + r * np.cos(t)
        mc = np.where(px >= 60.0, 20.0, 10.0).mean()
        assert abs(footprint_mean(g, fp)[0] - mc) / mc < 0.005

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 30))
    def test_areas_sum_to_disc(self, dx, dy, radius):
        g = _grid(40, 40)
        fp = _good(center_x=200.0 + dx, center_y=200.0 + dy, radius=radius)
        _, _, areas = footprint_weights(g, fp)
        assert math.isclose(areas.sum(), math.pi * radius**2, rel_tol=1e-9)
        assert np.all(areas <= 100.0 + 1e-9)

    def test_outside_grid(self):
        with pytest.raises(FootprintGeometryError):
            footprint_mean(_grid(), _good(center_x=-500.0, center_y=-500.0))

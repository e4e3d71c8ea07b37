import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agbnet.preprocess.bands import (
    ConfigurationError,
    calibrate_palsar,
    db_ratio,
    focal_mean,
    latlon_planes,
    resample_bicubic,
    spectral_index,
    temporal_ndvi_stats,
)
from agbnet.raster_io import DEFAULT_NODATA, RasterGrid

ND = DEFAULT_NODATA


class TestCalibratePalsar:
    @pytest.mark.parametrize("dn, expected", [(10000, -3.0), (5000, -9.020599913279624)])
    def test_spot_values(self, dn, expected):
        # oracle: 20*log10(DN) - 83 evaluated independently with math.log10
        assert math.isclose(20 * math.log10(dn) - 83, expected, rel_tol=1e-12)
        out = calibrate_palsar(np.array([[dn]], dtype=float))
        assert math.isclose(out[0, 0], expected, rel_tol=1e-12)

    def test_non_positive_is_nodata_and_counted(self):
        out, dropped = calibrate_palsar(np.array([[0.0, -5.0, 100.0, ND]]), return_count=True)
        assert list(out[0, :2]) == [ND, ND] and out[0, 3] == ND
        assert dropped == 3

    @given(st.floats(1e-3, 1e6))
    def test_doubling_adds_constant(self, dn):
        a, b = calibrate_palsar(np.array([dn, 2 * dn]))
        assert math.isclose(b - a, 20 * math.log10(2), abs_tol=1e-9)

    @given(arrays(np.float64, 20, elements=st.floats(1e-3, 1e6)))
    def test_monotone(self, dn):
        dn = np.unique(dn)
        # distinct up to float resolution of the logarithm
        dn = dn[np.concatenate([[True], np.diff(dn) > 1e-9 * dn[1:]])]
        assert np.all(np.diff(calibrate_palsar(dn)) > 0)

    def test_grid_in_grid_out(self):
        grid = RasterGrid(np.full((1, 2, 2), 10000.0), ["HV"])
        out = calibrate_palsar(grid)
        assert isinstance(out, RasterGrid) and out.band_names == ["HV"]
        np.testing.assert_allclose(out.values, -3.0)


class TestFocalMean:
    def test_constant_unchanged(self):
        band = np.full((5, 6), 3.5)
        np.testing.assert_allclose(focal_mean(band), band)

    def test_center_impulse(self):
        band = np.zeros((3, 3))
        band[1, 1] = 1.0
        assert math.isclose(focal_mean(band)[1, 1], 1 / 9)

    def test_corner_uses_in_bounds_neighbours(self):
        band = np.arange(16, dtype=float).reshape(4, 4)
        assert math.isclose(focal_mean(band)[0, 0], np.mean([0, 1, 4, 5]))

    def test_nodata_skipped_and_all_nodata_window(self):
        band = np.full((3, 3), ND)
        band[0, 0] = 4.0
        out = focal_mean(band)
        assert out[1, 1] == 4.0
        band2 = np.full((5, 5), ND)
        band2[0, 0] = 1.0
        assert focal_mean(band2)[4, 4] == ND

    def test_matches_naive_window(self, rng):
        band = rng.standard_normal((7, 9))
        band[rng.uniform(size=band.shape) < 0.2] = ND
        out = focal_mean(band, radius=2)
        for i in range(7):
            for j in range(9):
                win = band[max(i - 2, 0) : i + 3, max(j - 2, 0) : j + 3]
                ok = win[win != ND]
                expected = ok.mean() if ok.size else ND
                assert math.isclose(out[i, j], expected, rel_tol=1e-12, abs_tol=1e-12)

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            focal_mean(np.zeros((3, 3)), radius=0)


class TestDbRatio:
    def test_equal_bands(self, rng):
        a = rng.uniform(-20, 0, (4, 4))
        np.testing.assert_array_equal(db_ratio(a, a), 0.0)

    def test_subtraction(self):
        assert db_ratio(np.array([-3.0]), np.array([-9.0]))[0] == 6.0

    def test_linear_domain_oracle(self, rng):
        a = rng.uniform(-25, 0, 100)
        b = rng.uniform(-25, 0, 100)
        lin = 10 ** (a / 10) / 10 ** (b / 10)
        np.testing.assert_allclose(10 ** (db_ratio(a, b) / 10), lin, rtol=1e-9)

    def test_nodata_propagates(self):
        out = db_ratio(np.array([ND, -3.0]), np.array([-1.0, ND]))
        assert list(out) == [ND, ND]

    def test_named_grid_output(self):
        vv = RasterGrid(np.full((1, 2, 2), -5.0), ["VV"])
        vh = RasterGrid(np.full((1, 2, 2), -12.0), ["VH"])
        out = db_ratio(vv, vh)
        assert out.band_names == ["VV_VH"]
        np.testing.assert_allclose(out.values, 7.0)


class TestSpectralIndex:
    def test_symmetric_reflectance(self):
        bands = {"NIR": np.array([0.3]), "Red": np.array([0.3])}
        assert spectral_index("NDVI", bands)[0] == 0.0
        assert spectral_index("kNDVI", bands)[0] == 0.0

    def test_ndvi_kndvi_scalar(self):
        bands = {"B8": np.array([0.8]), "B4": np.array([0.2])}
        assert math.isclose(spectral_index("NDVI", bands)[0], 0.6)
        assert math.isclose(spectral_index("kNDVI", bands)[0], math.tanh(0.36))
        assert abs(math.tanh(0.36) - 0.34521) < 1e-5

    def test_ndmi_scalar(self):
        bands = {"NIR": np.array([0.5]), "SWIR": np.array([0.25])}
        assert math.isclose(spectral_index("NDMI", bands)[0], 1 / 3)

    def test_zero_denominator_is_nodata(self):
        bands = {"NIR": np.array([0.0]), "Red": np.array([0.0])}
        assert spectral_index("NDVI", bands)[0] == ND

    def test_missing_band(self):
        with pytest.raises(ConfigurationError, match="SWIR"):
            spectral_index("NDMI", {"NIR": np.array([0.5]), "Red": np.array([0.1])})

    @given(arrays(np.float64, 30, elements=st.floats(0, 1)), arrays(np.float64, 30, elements=st.floats(0, 1)))
    def test_ranges(self, nir, red):
        bands = {"NIR": nir, "Red": red, "SWIR": red}
        for kind in ("NDVI", "NDMI"):
            v = spectral_index(kind, bands)
            v = v[v != ND]
            assert np.all((v >= -1) & (v <= 1))
        k = spectral_index("kNDVI", bands)
        k = k[k != ND]
        assert np.all((k >= 0) & (k <= math.tanh(1) + 1e-15))


class TestTemporalNdvi:
    def test_single_epoch(self, rng):
        a = rng.uniform(0, 1, (3, 3))
        lo, hi, diff = temporal_ndvi_stats([a])
        np.testing.assert_array_equal(lo, hi)
        np.testing.assert_array_equal(diff, 0)

    def test_direct_scan(self):
        lo, hi, diff = temporal_ndvi_stats([np.array([0.2]), np.array([0.7]), np.array([0.5])])
        assert (lo[0], hi[0]) == (0.2, 0.7)
        assert math.isclose(diff[0], 0.5)

    def test_nodata_epoch_skipped(self):
        lo, hi, diff = temporal_ndvi_stats([np.array([0.2, ND]), np.array([ND, ND]), np.array([0.6, ND])])
        assert (lo[0], hi[0]) == (0.2, 0.6)
        assert (lo[1], hi[1], diff[1]) == (ND, ND, ND)

    def test_empty(self):
        with pytest.raises(ValueError):
            temporal_ndvi_stats([])


class TestResampleBicubic:
    def test_identity_factor_one(self, rng):
        a = rng.standard_normal((6, 7))
        np.testing.assert_allclose(resample_bicubic(a, 1.0), a, atol=1e-12)

    @pytest.mark.parametrize("factor", [0.5, 2.0, 2.5, 5.0])
    def test_constant_reproduced(self, factor):
        out = resample_bicubic(np.full((8, 8), 4.25), factor)
        np.testing.assert_allclose(out, 4.25, atol=1e-12)

    @pytest.mark.parametrize("factor", [2.0, 2.5, 4.0])
    def test_planar_reproduced_in_interior(self, factor):
        n = 12
        jj, ii = np.meshgrid(np.arange(n), np.arange(n))
        z = 2.0 * jj + 3.0 * ii
        out = resample_bicubic(z, factor)
        m = out.shape[0]
        src = (np.arange(m) + 0.5) / factor - 0.5
        inner = (src >= 1) & (src <= n - 3)
        expected = 2.0 * src[None, :] + 3.0 * src[:, None]
        sel = np.ix_(inner, inner)
        np.testing.assert_allclose(out[sel], expected[sel], atol=1e-6)

    def test_nodata_support(self):
        a = np.ones((8, 8))
        a[4, 4] = ND
        out = resample_bicubic(a, 2.0)
        assert (out == ND).any() and (out != ND).any()

    def test_grid_pixel_size(self):
        grid = RasterGrid(np.ones((1, 4, 4)), ["HV"], (0.0, 0.0), (25.0, -25.0))
        out = resample_bicubic(grid, 2.5)
        assert out.pixel_size == (10.0, -10.0) and out.rows == 10


class TestLatLon:
    def test_one_by_one(self):
        grid = RasterGrid(np.zeros((1, 1, 1)), ["a"], (100.0, 200.0), (10.0, -10.0))
        lat, lon = latlon_planes(grid)
        assert lat.values[0, 0, 0] == 195.0 and lon.values[0, 0, 0] == 105.0

    def test_corners(self):
        grid = RasterGrid(np.zeros((1, 3, 5)), ["a"], (0.0, 0.0), (2.0, -4.0))
        lat, lon = latlon_planes(grid)
        assert lon.values[0, 0, 0] == 1.0 and lon.values[0, -1, -1] == 9.0
        assert lat.values[0, 0, 0] == -2.0 and lat.values[0, -1, -1] == -10.0
        assert lat.band_names == ["lat"] and lon.band_names == ["lon"]

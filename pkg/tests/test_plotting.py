import numpy as np
import pytest

from agbnet.plotting import plot_history, plot_map, plot_scatter
from agbnet.raster_io import RasterGrid
from agbnet.training import regression_metrics

PNG = b"\x89PNG\r\n\x1a\n"


class TestFigures:
    def test_map_with_nodata(self, tmp_path, rng):
        v = rng.uniform(0, 300, (1, 20, 30))
        v[0, :3] = -9999.0
        path = plot_map(RasterGrid(v, ["AGB"]), tmp_path / "m.png", "AGB")
        assert path.read_bytes()[:8] == PNG

    def test_scatter(self, tmp_path, rng):
        y = rng.uniform(0, 300, 500)
        p = y + rng.normal(0, 20, 500)
        path = plot_scatter(y, p, tmp_path / "s.png", "pixel", regression_metrics(y, p))
        assert path.read_bytes()[:8] == PNG

    def test_history(self, tmp_path):
        hist = [{"epoch": e, "train_loss": 1 / e, "val_loss": 1.5 / e, "lr": 1e-3} for e in range(1, 6)]
        assert plot_history(hist, tmp_path / "h.png").read_bytes()[:8] == PNG

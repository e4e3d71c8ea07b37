import numpy as np
import pytest
from hypothesis import settings

from agbnet.raster_io import RasterGrid

settings.register_profile("agbnet", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("agbnet")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_grid(values, names=None, origin=(1000.0, 2000.0), pixel=10.0):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    names = names or [f"b{i}" for i in range(values.shape[0])]
    return RasterGrid(values, names, origin, (pixel, -pixel))


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

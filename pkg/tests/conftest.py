import warnings

import numpy as np
import pytest

from radnls.grid import ModelParams, PotentialSpec, make_grid


def model(d, p, potential=None, **kw):
    """ModelParams with the dimension-range warnings silenced."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ModelParams(d, p, potential or PotentialSpec(), **kw)


def gaussian_field(grid, amplitude=1.0, width=1.0):
    return grid.field(amplitude * np.exp(-0.5 * (grid.r / width) ** 2))


@pytest.fixture
def grid5():
    return make_grid(5, 512, 12.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k[1:])):
        terminalreporter.write_line(results[key])

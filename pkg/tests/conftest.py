import numpy as np
import pytest

from coagfrag.config import load_scenario
from coagfrag.grid import SizeGrid
from coagfrag.operators import assemble


@pytest.fixture(scope="session")
def theorem12():
    return load_scenario("theorem12")


@pytest.fixture(scope="session")
def t12_ops(theorem12):
    cfg = theorem12.config
    return assemble(cfg.coeffs, cfg.grid, cfg.diffusion)


@pytest.fixture(scope="session")
def small_ops(theorem12):
    """The same coefficients on a coarse grid, for cheap dense checks."""
    return assemble(theorem12.config.coeffs, SizeGrid.geometric(96, 1e-3, 1e2), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

import numpy as np
import pytest

from coagfrag.config import builtin_scenarios, load_scenario, resolve_path
from coagfrag.errors import ConfigError
from coagfrag.grid import SizeGrid, write_state_csv, state_from_phi
from coagfrag.timestepper import RunConfig

SHIPPED = ["bounded_product", "duhamel_short", "frag_diffusion", "multiplicative", "pure_coag",
           "pure_diffusion", "pure_frag", "theorem12", "theorem12_m3", "zero"]

MINIMAL = """\
[scenario]
name = tiny
description = small test case

[rate]
family = power_law
A = 1.0
gamma = 1.0

[daughter]
family = power_law
nu = 0.0

[kernel]
family = constant
kappa = 0.5

[coefficients]
theta0 = 0.5
theta = 0.75
m = 2.0

[grid]
spacing = geometric
n = 48
x_min = 1e-3
x_max = 1e2

[initial]
family = gamma
amplitude = 1.0
power = 1.0
scale = 1.0

[run]
T_final = 0.05
dt_init = 1e-3
dt_max = 1e-3
output_every = 0.025
"""


def write(tmp_path, text, name="tiny.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_shipped_scenarios_listed():
    assert builtin_scenarios() == SHIPPED


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_scenarios_load(name):
    sc = load_scenario(name)
    assert sc.name == name and sc.description
    assert isinstance(sc.config, RunConfig)


def test_minimal_file(tmp_path):
    sc = load_scenario(str(write(tmp_path, MINIMAL)))
    cfg = sc.config
    assert cfg.grid.n == 48 and cfg.T_final == 0.05 and cfg.mode == "imex"
    assert cfg.coeffs.k.kappa == 0.5
    assert sc.initial_spec["family"] == "gamma"
    assert load_scenario(str(tmp_path / "tiny.ini"), grid_refine=2).config.grid.n == 96


@pytest.mark.parametrize("edit, fragment", [
    (("[run]", "[run]\nbogus = 1"), "bogus"),
    (("[grid]\n", "[grid]\nspacing = spiral\n"), "spacing"),
    (("n = 48", "n = forty"), "n"),
    (("T_final = 0.05", "T_final = -1"), "T_final"),
    (("[kernel]\nfamily = constant", "[kernel]\nfamily = sticky"), "family"),
])
def test_malformed_files_name_the_line(tmp_path, edit, fragment):
    text = MINIMAL.replace(*edit, 1)
    with pytest.raises(ConfigError) as err:
        load_scenario(str(write(tmp_path, text)))
    msg = str(err.value)
    assert "tiny.ini" in msg and fragment.lower() in msg.lower()


def test_missing_section(tmp_path):
    text = MINIMAL.replace("[daughter]\nfamily = power_law\nnu = 0.0\n", "")
    with pytest.raises(ConfigError, match="daughter"):
        load_scenario(str(write(tmp_path, text)))


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match="extras"):
        load_scenario(str(write(tmp_path, MINIMAL + "\n[extras]\nx = 1\n")))


def test_unknown_scenario_name():
    with pytest.raises(ConfigError):
        resolve_path("no_such_scenario")


def test_csv_initial_resolved_relative_to_file(tmp_path):
    g = SizeGrid.geometric(48, 1e-3, 1e2)
    write_state_csv(tmp_path / "f.csv", state_from_phi(g, np.exp(-g.centers)))
    text = MINIMAL.replace("family = gamma\namplitude = 1.0\npower = 1.0\nscale = 1.0", "family = csv\npath = f.csv")
    sc = load_scenario(str(write(tmp_path, text)))
    np.testing.assert_array_equal(sc.config.initial.phi, np.exp(-g.centers))

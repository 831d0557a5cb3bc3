import numpy as np
import pytest

from coagfrag.coefficients import ConstantKernel, PowerLawDaughter, PowerLawRate, make_coefficients
from coagfrag.errors import ConfigError, DtUnderflow
from coagfrag.grid import SizeGrid, moment, project_initial, state_from_phi
from coagfrag.operators import ShiftedSolver, assemble
from coagfrag.timestepper import RunConfig, global_existence_monitor, run, step


def _coeffs(kappa=1.0, frag=True):
    rate = PowerLawRate(1.0, 1.0) if frag else PowerLawRate(0.0, 0.0)
    return make_coefficients(rate, PowerLawDaughter(0.0), ConstantKernel(kappa), 0.5, 0.75, 2.0)


GRID = SizeGrid.geometric(64, 1e-2, 1e2)


def _gamma(x):
    return x * np.exp(-x)


@pytest.mark.parametrize("kwargs", [
    {"T_final": 0.0},
    {"T_final": np.inf},
    {"dt_min": 1e-2, "dt_init": 1e-3},
    {"dt_init": 1.0, "dt_max": 0.1},
    {"mode": "rk4"},
    {"diffusion": -1.0},
    {"output_every": -0.1},
])
def test_config_rejects_bad_values(kwargs):
    base = {"T_final": 1.0}
    base.update(kwargs)
    with pytest.raises(ConfigError):
        RunConfig(_coeffs(), GRID, _gamma, **base)


def test_output_times():
    cfg = RunConfig(_coeffs(), GRID, _gamma, 1.0)
    np.testing.assert_allclose(cfg.output_times(), np.arange(1, 21) / 20)
    cfg = RunConfig(_coeffs(), GRID, _gamma, 1.0, output_every=0.3)
    np.testing.assert_allclose(cfg.output_times(), [0.3, 0.6, 0.9, 1.0])


def test_linear_step_is_backward_euler():
    ops = assemble(_coeffs(kappa=0.0), GRID)
    f = project_initial(_gamma, GRID)
    res = step(f, 1e-2, ops)
    np.testing.assert_allclose(res.state.phi, ShiftedSolver(ops, 1.0, 1e-2).solve(f.phi), rtol=1e-14)
    assert res.halvings == 0 and res.dt == 1e-2
    assert res.state.ledger_residual() < 1e-13


def test_constant_kernel_number_decay_per_step():
    ops = assemble(_coeffs(frag=False), GRID, 0.0)
    f = project_initial(_gamma, GRID)
    dt = 1e-4
    n0 = moment(f, 0.0)
    n1 = moment(step(f, dt, ops).state, 0.0)
    assert (n1 - n0) / dt == pytest.approx(-0.5 * n0 * n0, rel=1e-3)


def test_step_halves_until_loss_admissible():
    ops = assemble(_coeffs(kappa=1e3, frag=False), GRID)
    f = project_initial(_gamma, GRID)
    res = step(f, 1.0, ops)
    assert res.halvings > 0 and res.dt == pytest.approx(2.0**-res.halvings)
    assert res.state.phi.min() >= 0
    with pytest.raises(DtUnderflow) as err:
        step(f, 1.0, ops, dt_min=0.5)
    assert err.value.t == 0.0


def test_zero_state_stays_zero():
    cfg = RunConfig(_coeffs(), GRID, lambda x: 0.0 * x, 0.1)
    traj = run(cfg)
    assert traj.completed
    assert all(np.all(s.phi == 0) for s in traj.snapshots)
    assert traj.max_ledger_residual == 0.0


def test_run_bookkeeping_and_determinism():
    cfg = RunConfig(_coeffs(), GRID, _gamma, 0.2, dt_max=1e-2, output_every=0.05)
    a, b = run(cfg), run(cfg)
    assert a.completed and a.abort_reason is None
    assert [s.t for s in a.snapshots] == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2])
    assert len(a.ledger) == len(a.snapshots)
    assert a.max_ledger_residual < 1e-12
    assert a.min_phi >= -1e-12 and a.clip_total == 0.0
    for sa, sb in zip(a.snapshots, b.snapshots):
        np.testing.assert_array_equal(sa.phi, sb.phi)
    mom = a.moments.as_arrays()
    assert mom["t"].size == a.steps_accepted + 1
    assert np.all(np.diff(mom["t"]) > 0)
    s = a.summary()
    assert s["status"] == "completed" and s["t_final"] == pytest.approx(0.2)


def test_run_accepts_state_and_rejects_foreign_grid():
    f = project_initial(_gamma, GRID)
    traj = run(RunConfig(_coeffs(), GRID, f, 0.01))
    assert traj.completed
    other = state_from_phi(SizeGrid.geometric(64, 1e-3, 1e2), f.phi)
    with pytest.raises(ConfigError):
        run(RunConfig(_coeffs(), GRID, other, 0.01))


def test_underflow_is_recorded_not_raised():
    cfg = RunConfig(_coeffs(kappa=1e6, frag=False), GRID, lambda x: 1e3 * _gamma(x), 0.1,
                    dt_init=1e-2, dt_min=1e-4, dt_max=1e-2)
    traj = run(cfg)
    assert traj.status == "aborted"
    assert traj.abort_reason.startswith("dt underflow")
    mon = global_existence_monitor(traj, cfg.coeffs)
    assert not mon["conclusive"] and "note" in mon


def test_duhamel_mode_matches_imex_on_short_horizon():
    common = dict(T_final=2e-3, output_every=1e-3)
    imex = run(RunConfig(_coeffs(), GRID, _gamma, dt_init=1e-6, dt_min=1e-9, dt_max=1e-6, **common))
    duh = run(RunConfig(_coeffs(), GRID, _gamma, mode="duhamel", picard_window=1e-3, picard_steps=256, **common))
    assert duh.completed and duh.picard
    assert all(p["converged"] for p in duh.picard)
    g = GRID
    w = g.centers + g.centers**2
    dist = float(np.sum(w * np.abs(duh.final.phi - imex.final.phi) * g.widths))
    assert dist <= 1e-5


def test_monitor_reports_suprema():
    cfg = RunConfig(_coeffs(), GRID, _gamma, 0.05)
    traj = run(cfg)
    mon = global_existence_monitor(traj, cfg.coeffs)
    mom = traj.moments.as_arrays()
    assert mon["sup_E0"] == pytest.approx(mom["E0"].max())
    assert mon["conclusive"] and not mon["flag"]

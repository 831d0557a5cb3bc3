import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings
from hypothesis import strategies as st

from coagfrag import kernels
from coagfrag._accel import backend_name
from coagfrag.coefficients import ConstantKernel, PowerLawDaughter, PowerLawRate, make_coefficients
from coagfrag.grid import SizeGrid, random_state, state_from_phi
from coagfrag.operators import (
    ShiftedSolver,
    apply_coag,
    apply_diff,
    apply_frag,
    assemble,
    check_bilinear_bound,
    coag_rates,
    export_coo,
)


def _mass(ops, v):
    g = ops.grid
    return float(g.centers @ (np.asarray(v) * g.widths))


def test_fragmentation_columns_conserve_mass(t12_ops):
    g = t12_ops.grid
    col_mass = (g.centers * g.widths) @ t12_ops.L_frag.toarray()
    scale = np.abs(t12_ops.L_frag.toarray()).T @ (g.centers * g.widths)
    assert np.max(np.abs(col_mass) / np.maximum(scale, 1e-300)) < 1e-13


def test_fragmentation_matrix_is_upper_with_negative_diagonal(t12_ops):
    L = t12_ops.L_frag.toarray()
    assert np.allclose(np.tril(L, -1), 0.0)
    assert np.all(np.diag(L) <= 0)
    assert np.all(L - np.diag(np.diag(L)) >= 0)


def test_diffusion_mass_identity(t12_ops, rng):
    s = random_state(t12_ops.grid, rng)
    rate = t12_ops.diffusion * apply_diff(t12_ops, s)
    gross = _mass(t12_ops, np.abs(rate))
    assert abs(_mass(t12_ops, rate) + t12_ops.leak_rate(s.phi)) <= 1e-13 * gross


def test_noflux_conserves_number(theorem12):
    ops = assemble(theorem12.config.coeffs, SizeGrid.uniform(50, 1e-3, 5.0), 1.0, "noflux")
    phi = np.linspace(1.0, 2.0, 50)
    flux = ops.grid.widths @ (ops.L_diff @ phi)
    # only the Dirichlet face at 0 removes particles
    assert flux == pytest.approx(-phi[0] / ops.grid.centers[0], rel=1e-10)


def test_diffusion_is_an_m_matrix(t12_ops):
    L = t12_ops.L_diff.toarray()
    off = L - np.diag(np.diag(L))
    assert np.all(off >= 0) and np.all(np.diag(L) < 0)


def test_linear_generator_combines_parts(t12_ops, rng):
    s = random_state(t12_ops.grid, rng)
    want = t12_ops.diffusion * apply_diff(t12_ops, s) + apply_frag(t12_ops, s)
    np.testing.assert_allclose(t12_ops.A @ s.phi, want, rtol=0, atol=1e-13 * np.abs(want).max())


def test_coagulation_conserves_mass_for_small_supports(small_ops, rng):
    g = small_ops.grid
    for _ in range(20):
        s = random_state(g, rng, support=(0.0, g.x_max / 2))
        cr = coag_rates(small_ops, s.phi)
        assert abs(_mass(small_ops, cr.rate)) <= 1e-13 * cr.gross
        assert cr.overflow == 0.0


def test_coagulation_overflow_accounts_for_mass(small_ops, rng):
    s = random_state(small_ops.grid, rng)
    cr = coag_rates(small_ops, s.phi + 1.0)
    assert _mass(small_ops, cr.rate) + cr.overflow == pytest.approx(0.0, abs=1e-12 * cr.gross)


def test_constant_kernel_number_rate():
    coeffs = make_coefficients(PowerLawRate(0.0, 0.0), PowerLawDaughter(0.0), ConstantKernel(1.0), 0.5, 0.75, 2.0)
    g = SizeGrid.geometric(200, 1e-3, 1e3)
    ops = assemble(coeffs, g, 0.0)
    phi = np.exp(-g.centers)
    n = float(phi @ g.widths)
    # fixed-pivot splitting preserves number of each newborn
    assert float(apply_coag(ops, phi) @ g.widths) == pytest.approx(-0.5 * n * n, rel=1e-10)


def test_loss_frequency_is_nonnegative(small_ops, rng):
    s = random_state(small_ops.grid, rng)
    cr = coag_rates(small_ops, s.phi)
    assert np.all(cr.nu >= 0)
    # loss never exceeds nu * phi
    assert np.all(cr.rate >= -cr.nu * s.phi - 1e-12 * np.abs(cr.rate).max())


def test_bilinear_ratios_below_one(small_ops, rng):
    g = small_ops.grid
    for _ in range(30):
        p, q = random_state(g, rng), random_state(g, rng)
        rep = check_bilinear_bound(small_ops, p.phi, q.phi)
        assert rep.passed()
        assert rep.ratio_k1b is not None


def test_bilinear_needs_a_constant():
    coeffs = make_coefficients(PowerLawRate(0.0, 0.0), PowerLawDaughter(0.0), ConstantKernel(1.0), 0.5, 0.75, 2.0)
    ops = assemble(coeffs, SizeGrid.geometric(8, 1e-2, 10.0))
    if coeffs.kstar_effective is None:
        with pytest.raises(ValueError):
            check_bilinear_bound(ops, np.ones(8), np.ones(8))


def _pair_args(ops, phi, psi):
    c, g = ops.coag, ops.grid
    return (np.ascontiguousarray(phi), np.ascontiguousarray(psi), g.widths, g.centers, c.pi, c.pj, c.kij, c.tgt, c.whi)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-0.5, 0.5))
def test_coag_backends_agree(small_ops, seed, shift):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(small_ops.grid.n) + shift
    psi = rng.standard_normal(small_ops.grid.n)
    a = kernels.coag_rates_loop(*_pair_args(small_ops, phi, psi))
    b = kernels.coag_rates_vec(*_pair_args(small_ops, phi, psi))
    scale = np.abs(a[0]).max()
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-13 * scale)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-13 * np.abs(a[1]).max())
    assert a[2] == pytest.approx(b[2], rel=1e-12, abs=1e-300)
    assert a[3] == pytest.approx(b[3], rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 60), seed=st.integers(0, 2**32 - 1))
def test_thomas_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    lower = -rng.uniform(0, 1, n)
    upper = -rng.uniform(0, 1, n)
    diag = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.standard_normal(n)
    dense = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    ref = np.linalg.solve(dense, rhs)
    np.testing.assert_allclose(kernels.thomas_loop(lower, diag, upper, rhs), ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(kernels.thomas_vec(lower, diag, upper, rhs), ref, rtol=1e-12, atol=1e-14)


def test_numpy_fallback_selected_by_environment():
    code = ("from coagfrag._accel import backend_name; from coagfrag import kernels; "
            "print(backend_name(), kernels.coag_rates is kernels.coag_rates_vec)")
    env = dict(os.environ, COAGFRAG_USE_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_backend_name_is_known():
    assert backend_name() in ("numba", "numpy")


@pytest.mark.parametrize("diffusion, frag, kind", [(1.0, False, "tridiagonal"), (0.0, True, "triangular"), (1.0, True, "lu")])
def test_shifted_solver_structure(diffusion, frag, kind):
    rate = PowerLawRate(1.0, 1.0) if frag else PowerLawRate(0.0, 0.0)
    coeffs = make_coefficients(rate, PowerLawDaughter(0.0), ConstantKernel(1.0), 0.5, 0.75, 2.0)
    ops = assemble(coeffs, SizeGrid.geometric(60, 1e-3, 1e2), diffusion)
    solver = ShiftedSolver(ops, 1.0, 0.1)
    assert solver.kind == kind
    rhs = np.random.default_rng(0).standard_normal(60)
    mat = np.eye(60) - 0.1 * ops.A.toarray()
    np.testing.assert_allclose(mat @ solver.solve(rhs), rhs, atol=1e-11)


def test_export_round_trip(small_ops, tmp_path):
    paths = export_coo(small_ops, tmp_path)
    assert [p.name for p in paths] == ["L_diff.mtx", "L_frag.mtx"]
    back = scipy.io.mmread(str(paths[1])).toarray()
    np.testing.assert_array_equal(back, small_ops.L_frag.toarray())


def test_state_objects_accepted(small_ops, rng):
    s = random_state(small_ops.grid, rng)
    np.testing.assert_array_equal(apply_frag(small_ops, s), apply_frag(small_ops, s.phi))
    assert state_from_phi(small_ops.grid, s.phi).budget.initial == pytest.approx(s.budget.initial)

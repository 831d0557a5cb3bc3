import math

import numpy as np
import pytest

from coagfrag.bounds import (
    bootstrap_bound,
    bound_constants,
    delta_range_claims,
    gronwall_trajectory,
    kappa2,
    lge1_check,
    lge2_check,
    lge3_check,
    lge4_check,
)
from coagfrag.coefficients import PowerLawDaughter, with_constants
from coagfrag.config import load_scenario
from coagfrag.grid import moment, project_initial, random_state, state_from_phi


@pytest.mark.parametrize("r, expected", [(1.5, 6.75), (2.0, 10.0), (3.0, 18.0), (4.0, 56.0)])
def test_kappa2(r, expected):
    assert kappa2(r) == pytest.approx(expected)


def test_constants_at_order_two(theorem12):
    coeffs = theorem12.config.coeffs
    c = bound_constants(coeffs, 2.0)
    kstar = coeffs.kstar_effective
    assert c.delta_r == pytest.approx(1.0 / 3.0)
    assert c.c1 == pytest.approx(8.0 * coeffs.k0)
    assert c.c2 == pytest.approx(10.0 * kstar)
    assert c.c3 == pytest.approx(16.0 * kstar)
    assert c.kappa1 == max(c.c1, c.c2, c.c3)
    assert c.R_r == pytest.approx(12.0)
    assert c.young_exponents == pytest.approx((4.0, 3.0))
    assert c.young_constant == pytest.approx(216.0)
    assert c.c_r == pytest.approx(0.5)
    assert c.kappa3 == pytest.approx(max(c.a_sup + 6.0 + c.kappa1 + 0.5 * c.B, 4.0, c.B))
    d = c.to_dict()
    assert set(d["derivation"]) <= set(d)


def test_constants_reject_bad_input(theorem12):
    coeffs = theorem12.config.coeffs
    for r in (1.0, 2.5):
        with pytest.raises(ValueError):
            bound_constants(coeffs, r)
    with pytest.raises(ValueError):
        bound_constants(with_constants(coeffs, k0=None), 2.0)


def test_delta_range_claims_uniform_daughter():
    rows = delta_range_claims(PowerLawDaughter(0.0), 1.0 / 3.0)
    assert [row["r"] for row in rows] == [1.5, 2.0, 2.5, 3.0]
    assert all(row["passed"] for row in rows)
    assert rows[0]["floor"] == pytest.approx(1.0 - (2.0 / 3.0) ** 0.5)


@pytest.mark.parametrize("r", [1.5, 2.0])
def test_lemmas_hold_on_random_states(t12_ops, rng, r):
    consts = bound_constants(t12_ops.coeffs, r)
    for _ in range(15):
        s = random_state(t12_ops.grid, rng)
        checks = [lge1_check(t12_ops, s, r, consts.delta_r), lge2_check(t12_ops, s, r),
                  lge3_check(t12_ops, s, r, consts), lge4_check(t12_ops, s, r, consts)]
        assert all(c.passed for c in checks), [c.to_dict() for c in checks if not c.passed]


def test_lge2_identity_is_exact_for_states_vanishing_at_zero(t12_ops, rng):
    s = random_state(t12_ops.grid, rng)
    chk = lge2_check(t12_ops, s, 2.0)
    scale = abs(chk.lhs)
    assert abs(chk.detail["identity_residual"]) <= 1e-8 * scale
    # the residual is the ghost flux at the left end
    g = t12_ops.grid
    ghost = 0.5 * g.centers[0] ** 3 * s.phi[0] / g.centers[0]
    assert chk.detail["identity_residual"] == pytest.approx(ghost, rel=1e-3, abs=1e-12 * scale)


def test_lge2_identity_flags_mass_at_zero(t12_ops):
    g = t12_ops.grid
    s = state_from_phi(g, np.where(g.centers < 1e-3, 1e6, 0.0))
    chk = lge2_check(t12_ops, s, 2.0)
    assert not chk.detail["identity_passed"] and not chk.passed


def test_lge1_reports_worst_parent_when_delta_is_too_large(t12_ops, rng):
    s = random_state(t12_ops.grid, rng)
    chk = lge1_check(t12_ops, s, 2.0, delta_r=0.999)
    assert not chk.passed
    assert {"cell", "x", "lhs", "rhs"} <= set(chk.detail["worst_parent"])


def test_lge3_terms_and_scheme_value(t12_ops, rng):
    s = random_state(t12_ops.grid, rng)
    chk = lge3_check(t12_ops, s, 2.0)
    terms = chk.detail["terms"]
    assert chk.lhs == pytest.approx(sum(t["value"] for t in terms.values()))
    # the pivot split keeps number and mass of each newborn but not w_r
    assert chk.detail["scheme_value"] == pytest.approx(chk.lhs, rel=2e-3)


def test_zero_state_passes_every_check(t12_ops):
    s = state_from_phi(t12_ops.grid, np.zeros(t12_ops.grid.n))
    for chk in (lge1_check(t12_ops, s, 2.0), lge2_check(t12_ops, s, 2.0),
                lge3_check(t12_ops, s, 2.0), lge4_check(t12_ops, s, 2.0)):
        assert chk.passed


def test_gronwall_bound_shape(theorem12):
    cfg = theorem12.config
    f = project_initial(theorem12.config.initial, cfg.grid)
    gb = gronwall_trajectory(f, 2.0, cfg.coeffs)
    assert gb.value(0.0) >= moment(f, 1.0) + moment(f, 2.0)
    assert gb.kappa >= max(gb.K, 5.0)
    assert gb.log_value(1.0) - gb.log_value(0.0) == pytest.approx(gb.kappa)
    assert gb.to_dict()["constants"]["r"] == 2.0
    with pytest.raises(ValueError):
        gronwall_trajectory(f, 2.5, with_constants(cfg.coeffs))


@pytest.fixture(scope="module")
def m3():
    sc = load_scenario("theorem12_m3")
    return sc, project_initial(sc.config.initial, sc.config.grid)


def test_bootstrap_orders_and_methods(m3):
    sc, f = m3
    chain = bootstrap_bound(f, 3.0, 1.0, sc.config.coeffs)
    assert [(c.r, c.method) for c in chain] == [(1.0, "mass"), (2.0, "gronwall"), (3.0, "recursion")]
    assert chain[0].log10_bound == pytest.approx(math.log10(2.0 * moment(f, 1.0)))
    assert all(math.isfinite(c.log10_bound) and not c.vacuous for c in chain)
    later = bootstrap_bound(f, 3.0, 2.0, sc.config.coeffs)
    assert later[-1].log10_bound > chain[-1].log10_bound


def test_bootstrap_fractional_orders(m3):
    sc, f = m3
    coeffs = with_constants(sc.config.coeffs, m=2.5)
    chain = bootstrap_bound(f, 2.5, 0.5, coeffs)
    assert [c.r for c in chain] == [1.5, 2.5]


def test_bootstrap_marks_overflow_vacuous(m3):
    sc, _ = m3
    g = sc.config.grid
    big = project_initial(lambda x: 1e3 * x * np.exp(-x), g)
    chain = bootstrap_bound(big, 3.0, 2.0, sc.config.coeffs)
    assert chain[-1].vacuous and chain[-1].to_dict()["log10_bound"] is None

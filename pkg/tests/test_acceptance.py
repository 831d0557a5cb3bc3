"""Acceptance criteria 1-7.

Each test records one ``criterion N: PASS|FAIL ...`` line, printed in the
"acceptance criteria" section at the end of the pytest run.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE
from coagfrag.bounds import (
    bootstrap_bound,
    bound_constants,
    delta_range_claims,
    gronwall_trajectory,
    lge1_check,
    lge2_check,
    lge3_check,
    lge4_check,
)
from coagfrag.coefficients import ConstantKernel, with_constants
from coagfrag.config import builtin_scenarios, load_scenario
from coagfrag.convergence import run_battery
from coagfrag.grid import random_state
from coagfrag.operators import assemble, check_bilinear_bound, coag_rates
from coagfrag.semigroup import LinearPropagator, duhamel_picard
from coagfrag.timestepper import run

pytestmark = pytest.mark.slow


@pytest.fixture
def criterion(request):
    """Register a criterion as failed until the test reports otherwise."""
    def start(n):
        ACCEPTANCE[n] = f"criterion {n}: FAIL (did not finish: {request.node.name})"

        def report(ok, detail):
            ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
            assert ok, detail
        return report
    return start


@pytest.fixture(scope="module")
def runs():
    """Every shipped scenario integrated once, with wall time."""
    out = {}
    for name in builtin_scenarios():
        sc = load_scenario(name)
        cfg = sc.config
        ops = assemble(cfg.coeffs, cfg.grid, cfg.diffusion, cfg.right_bc)
        t0 = time.perf_counter()
        traj = run(cfg, ops)
        out[name] = (sc, traj, time.perf_counter() - t0)
    return out


def _e0(grid, m, v):
    return float(np.sum((grid.centers + grid.centers**m) * np.abs(v) * grid.widths))


def test_criterion_1_mass_ledger(runs, criterion):
    report = criterion(1)
    bad = []
    worst, worst_lin, slowest = 0.0, 0.0, 0.0
    for name, (sc, traj, secs) in runs.items():
        drift = traj.max_ledger_residual
        linear = sc.config.coeffs.k.is_zero
        limit = 1e-10 if linear else 1e-8
        worst = max(worst, drift)
        if linear:
            worst_lin = max(worst_lin, drift)
        slowest = max(slowest, secs)
        if not traj.completed or drift > limit or secs > 60.0:
            bad.append((name, traj.status, drift, secs))
    report(not bad, f"{len(runs)} scenarios; max drift {worst:.1e}, k=0 max {worst_lin:.1e}, "
                    f"slowest {slowest:.1f}s; violations {bad}")


def test_criterion_2_positivity(t12_ops, runs, criterion):
    report = criterion(2)
    rng = np.random.default_rng(2)
    prop = LinearPropagator(t12_ops)
    n = t12_ops.grid.n
    top = -math.inf
    for _ in range(500):
        lam = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e2))))
        g = -np.abs(rng.standard_normal(n)) * (rng.uniform(size=n) < rng.uniform(0.05, 1.0))
        top = max(top, float(prop.resolvent_solve(lam, g).max()))
    bad = []
    for name, (sc, traj, _) in runs.items():
        m1 = traj.snapshots[0].budget.initial
        if traj.min_phi < -1e-12 or traj.clip_total > 1e-9 * m1:
            bad.append((name, traj.min_phi, traj.clip_total))
    min_phi = min(t.min_phi for _, t, _ in runs.values())
    report(top <= 1e-12 and not bad,
           f"resolvent max over 500 nonpositive data {top:.1e}; run min density {min_phi:.1e}; violations {bad}")


def test_criterion_3_coagulation_operator(t12_ops, criterion):
    report = criterion(3)
    g = t12_ops.grid
    rng = np.random.default_rng(3)
    cm = 0.0
    for _ in range(200):
        s = random_state(g, rng, support=(0.0, g.x_max / 2))
        cr = coag_rates(t12_ops, s.phi)
        cm = max(cm, abs(float(g.centers @ (cr.rate * g.widths))) / cr.gross)
    r1 = r2 = 0.0
    for _ in range(200):
        p, q = random_state(g, rng), random_state(g, rng)
        rep = check_bilinear_bound(t12_ops, p.phi, q.phi)
        r1, r2 = max(r1, rep.ratio_k1), max(r2, rep.ratio_k1b)
    report(cm <= 1e-13 and r1 <= 1.0 and r2 <= 1.0,
           f"max |M1(K phi)|/gross {cm:.1e}; max Lipschitz ratios {r1:.3f}, {r2:.3f}")


def test_criterion_4_moment_lemmas(t12_ops, criterion):
    report = criterion(4)
    coeffs = t12_ops.coeffs
    orders = [1.5, 2.0]
    consts = {r: bound_constants(coeffs, r) for r in orders}
    rng = np.random.default_rng(4)
    failures = {}
    ident = 0.0
    for _ in range(500):
        s = random_state(t12_ops.grid, rng)
        for r in orders:
            c = consts[r]
            l2 = lge2_check(t12_ops, s, r)
            ident = max(ident, abs(l2.detail["identity_residual"]) / max(abs(l2.lhs), 1e-300))
            for chk in (lge1_check(t12_ops, s, r, c.delta_r), l2, lge3_check(t12_ops, s, r, c), lge4_check(t12_ops, s, r, c)):
                if not chk.passed:
                    failures[f"{chk.name}@{r:g}"] = failures.get(f"{chk.name}@{r:g}", 0) + 1
    report(not failures and ident <= 1e-8,
           f"500 states x 4 checks x r in {orders}: failures {failures or 0}; max identity residual {ident:.1e}")


def test_criterion_5_oracles(criterion):
    report = criterion(5)
    bat = run_battery()
    dx, dt = bat["diffusion_dx"].ratios, bat["diffusion_dt"].ratios
    ef, ec = bat["fragmentation_M0"].max_error, bat["coagulation_M0"].max_error
    ok = (all(abs(r - 4.0) <= 0.5 for r in dx) and all(abs(r - 2.0) <= 0.3 for r in dt)
          and ef <= 1e-4 and ec <= 1e-4 and bat["seconds"] <= 300.0)
    report(ok, f"dx ratios {[round(r, 2) for r in dx]}, dt ratios {[round(r, 2) for r in dt]}, "
               f"M0 errors frag {ef:.1e} coag {ec:.1e}, battery {bat['seconds']:.1f}s")


def test_criterion_6_global_bounds(runs, criterion):
    report = criterion(6)
    notes = []
    ok = True
    sc, traj, _ = runs["theorem12"]
    g = sc.config.grid
    f = traj.snapshots[0]
    times = np.array([s.t for s in traj.snapshots])
    for r in (1.5, 2.0):
        gb = gronwall_trajectory(f, r, sc.config.coeffs, sc.config.diffusion)
        sim = np.array([float((g.centers + g.centers**r) @ (s.phi * g.widths)) for s in traj.snapshots])
        head = float(np.min(gb.log_value(times) / math.log(10.0) - np.log10(sim)))
        ok &= head > 0 and traj.completed and times[-1] == pytest.approx(2.0)
        notes.append(f"gronwall r={r:g} headroom {head:.1f} dec")
    sc3, traj3, _ = runs["theorem12_m3"]
    g3 = sc3.config.grid
    f3 = traj3.snapshots[0]
    heads = []
    for s in traj3.snapshots:
        chain = bootstrap_bound(f3, 3.0, s.t, sc3.config.coeffs, sc3.config.diffusion)
        sim = float((g3.centers + g3.centers**3) @ (s.phi * g3.widths))
        heads.append(chain[-1].log10_bound - math.log10(sim))
    head3 = min(heads)
    ok &= math.isfinite(head3) and head3 > 0 and traj3.completed
    notes.append(f"bootstrap m=3 headroom {head3:.1f} dec")
    coeffs = sc.config.coeffs
    rows = delta_range_claims(coeffs.b, coeffs.delta2)
    ok &= all(row["passed"] for row in rows)
    notes.append("delta_r claims " + ", ".join(f"r={row['r']:g}:{'ok' if row['passed'] else 'no'}" for row in rows))
    report(ok, "; ".join(notes))


def test_criterion_7_duhamel_vs_imex(runs, criterion):
    report = criterion(7)
    sc, duh, _ = runs["duhamel_short"]
    cfg = sc.config
    imex = run(replace(cfg, mode="imex", dt_init=1e-6, dt_min=1e-9, dt_max=1e-6, name="imex_reference"))
    contracted = duh.completed and bool(duh.picard) and all(p["converged"] and p["contraction"] < 1 for p in duh.picard)
    dist = _e0(cfg.grid, cfg.coeffs.m, duh.final.phi - imex.final.phi)
    lin = with_constants(cfg.coeffs, k=ConstantKernel(0.0))
    prop = LinearPropagator(assemble(lin, cfg.grid, cfg.diffusion))
    f = duh.snapshots[0]
    one = duhamel_picard(prop, f, cfg.T_final, n_steps=cfg.picard_steps)
    report(contracted and dist <= 1e-5 and one.iterations == 1 and one.converged,
           f"E0 distance {dist:.1e} (Picard contraction {max(p['contraction'] for p in duh.picard):.2f}); "
           f"k=0 iterations {one.iterations}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))

"""Command line entry point: ``coagfrag {run,validate,bounds,converge,scenarios}``.

Exit codes: 0 success, 1 a checked property failed, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .bounds import (
    bootstrap_bound,
    bound_constants,
    delta_range_claims,
    gronwall_trajectory,
    lge1_check,
    lge2_check,
    lge3_check,
    lge4_check,
)
from .coefficients import validate_hypotheses
from .config import Scenario, builtin_scenarios, load_scenario
from .convergence import run_battery
from .errors import CoagFragError, ConfigError, GridError
from .grid import DensityState, random_state, read_state_csv, state_from_phi
from .operators import assemble, export_coo
from .timestepper import Trajectory, global_existence_monitor, run

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("coagfrag")


class UsageError(Exception):
    pass


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _envelope(command: str, **fields) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__, "backend": backend_name()}
    out.update(fields)
    return out


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    sc = load_scenario(args.config, args.grid_refine)
    report = validate_hypotheses(sc.config.coeffs)
    payload = _envelope("validate", scenario=sc.name, source=sc.source,
                        coefficients=sc.config.coeffs.describe(), **report.to_dict())
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validation.json").write_text(text + "\n")
    return EXIT_OK if report.all_passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _bound_report(sc: Scenario, traj: Trajectory) -> dict:
    coeffs = sc.config.coeffs
    D = sc.config.diffusion
    f = traj.snapshots[0]
    m = coeffs.m
    if not sc.reports.get("bounds", True):
        return {"status": "disabled"}
    if coeffs.k0 is None or coeffs.kstar_effective is None:
        return {"status": "unavailable", "reason": "k0 and k* are needed for the explicit constants"}
    if not coeffs.theta < 1.0:
        return {"status": "unavailable", "reason": "the assembled bound needs theta < 1"}
    times = np.array([s.t for s in traj.snapshots])
    x, dx = sc.config.grid.centers, sc.config.grid.widths
    if m <= 2.0:
        r = float(sc.reports.get("bound_order") or m)
        if not 1.0 < r <= m:
            return {"status": "unavailable", "reason": f"bound order {r:g} outside (1, m]"}
        gb = gronwall_trajectory(f, r, coeffs, D)
        mon = global_existence_monitor(traj, coeffs, gb)
        sim = np.array([float((x + x**r) @ (np.abs(s.phi) * dx)) for s in traj.snapshots])
        log_bound = gb.log_value(times) / math.log(10.0)
        return {
            "status": "ok", "kind": "gronwall", "order": r, "constants": gb.to_dict(),
            "times": times, "log10_bound": log_bound, "log10_simulated": np.log10(np.maximum(sim, 1e-300)),
            "min_headroom_log10": mon.get("min_headroom_log10"), "exceeded": mon["flag"],
        }
    sim = np.array([float((x + x**m) @ (np.abs(s.phi) * dx)) for s in traj.snapshots])
    logs, chains = [], []
    for t in times:
        chain = bootstrap_bound(f, m, float(t), coeffs, D)
        chains.append({"t": float(t), "chain": [link.to_dict() for link in chain]})
        logs.append(chain[-1].log10_bound)
    logs = np.array(logs)
    with np.errstate(divide="ignore"):
        headroom = logs - np.log10(np.maximum(sim, 1e-300))
    vacuous = bool(np.any(~np.isfinite(logs)))
    return {
        "status": "ok", "kind": "bootstrap", "order": m, "times": times, "log10_bound": logs,
        "log10_simulated": np.log10(np.maximum(sim, 1e-300)), "chains": chains,
        "min_headroom_log10": float(np.min(headroom[np.isfinite(headroom)])) if np.any(np.isfinite(headroom)) else None,
        "vacuous": vacuous, "exceeded": bool(np.any(headroom < 0)),
    }


def _write_run_outputs(out: Path, sc: Scenario, traj: Trajectory) -> None:
    g = sc.config.grid
    rows = []
    for s in traj.snapshots:
        for i in range(g.n):
            rows.append((s.t, i, g.centers[i], g.widths[i], s.phi[i]))
    _write_csv(out / "snapshots.csv", ["t", "cell", "x_center", "dx", "phi"], rows)
    mom = traj.moments.as_arrays()
    cols = ["t", "M0", "M1", "Mm", "E0", "Y"]
    _write_csv(out / "moments.csv", cols, zip(*(mom[c] for c in cols)))
    lcols = ["t", "interior", "leakage", "overflow", "clip", "expected", "residual"]
    _write_csv(out / "ledger.csv", lcols, ([row[c] for c in lcols] for row in traj.ledger))


def run_scenario(sc: Scenario, out: Path, force: bool, seed: int, export_operators: bool = False) -> tuple[int, dict]:
    """Run one scenario, write its outputs and return the exit code and summary."""
    out.mkdir(parents=True, exist_ok=True)
    validation = validate_hypotheses(sc.config.coeffs)
    if not validation.all_passed and not force:
        failed = [r.name for r in validation.results if not r.passed]
        payload = _envelope("run", scenario=sc.name, seed=seed, status="rejected",
                            reason=f"hypotheses failed: {failed}; use --force to run anyway",
                            validation=validation.to_dict())
        write_json(out / "summary.json", payload)
        return EXIT_FAIL, payload
    cfg = sc.config
    ops = assemble(cfg.coeffs, cfg.grid, cfg.diffusion, cfg.right_bc)
    if export_operators:
        export_coo(ops, out / "operators")
    traj = run(cfg, ops)
    _write_run_outputs(out, sc, traj)

    m1_f = traj.snapshots[0].budget.initial
    drift = traj.max_ledger_residual
    clip_rel = traj.clip_total / m1_f if m1_f > 0 else 0.0
    mon = global_existence_monitor(traj, cfg.coeffs)
    bounds = _bound_report(sc, traj)
    checks = {
        "completed": traj.completed,
        "mass_ledger": drift <= cfg.ledger_rtol,
        "positivity": traj.min_phi >= -cfg.positivity_tol and clip_rel <= 1e-9,
        "bound_respected": not bounds.get("exceeded", False),
    }
    criteria = traj.completed and mon["conclusive"] and checks["bound_respected"]
    payload = _envelope(
        "run", scenario=sc.name, description=sc.description, source=sc.source, seed=seed,
        forced=bool(force and not validation.all_passed), validation_passed=validation.all_passed,
        grid=cfg.grid.describe(), coefficients=cfg.coeffs.describe(), initial=sc.initial_spec,
        run={"mode": cfg.mode, "T_final": cfg.T_final, "diffusion": cfg.diffusion, "right_bc": cfg.right_bc,
             "dt_init": cfg.dt_init, "dt_min": cfg.dt_min, "dt_max": cfg.dt_max},
        result=traj.summary(), m1_drift=drift, min_density=traj.min_phi, clip_mass_relative=clip_rel,
        sup_Y=mon["sup_Y"], sup_E0=mon["sup_E0"], e0_criterion_applicable=mon["e0_criterion_applicable"],
        bounds=bounds, picard=traj.picard, abort_reason=traj.abort_reason,
        global_criteria_satisfied_on_horizon=bool(criteria), checks=checks,
    )
    write_json(out / "summary.json", payload)
    code = EXIT_OK if all(checks.values()) else EXIT_FAIL
    return code, payload


def _run_one(job):
    config, refine, out, force, seed, export = job
    sc = load_scenario(config, refine)
    code, payload = run_scenario(sc, Path(out), force, seed, export)
    return config, code, payload.get("status", payload.get("result", {}).get("status"))


def cmd_run(args) -> int:
    configs = args.config
    base = Path(args.out_dir or "out")
    jobs = []
    for c in configs:
        sc_name = load_scenario(c, args.grid_refine).name  # fail early on malformed files
        out = base if len(configs) == 1 else base / sc_name
        jobs.append((c, args.grid_refine, str(out), args.force, args.seed, args.export_operators))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    worst = EXIT_OK
    for config, code, status in results:
        print(f"{config}: {status} (exit {code})")
        worst = max(worst, code)
    return worst


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _lemma_row(ops, state: DensityState, orders, consts) -> dict:
    row = {}
    for r in orders:
        c = consts[r]
        checks = [lge1_check(ops, state, r, c.delta_r), lge2_check(ops, state, r),
                  lge3_check(ops, state, r, c), lge4_check(ops, state, r, c)]
        row[f"{r:g}"] = {chk.name: chk.to_dict() for chk in checks}
    return row


def _default_orders(m: float) -> list[float]:
    orders = [r for r in (1.5, 2.0, 2.5, 3.0) if r <= m + 1e-12]
    return orders or [m]


def cmd_bounds(args) -> int:
    sc = load_scenario(args.config, args.grid_refine)
    cfg = sc.config
    coeffs = cfg.coeffs
    if coeffs.k0 is None or coeffs.kstar_effective is None:
        raise UsageError("the lemma checks need k0 and k* (or K*) for this kernel; set them in [coefficients]")
    orders = [float(v) for v in args.orders.split(",")] if args.orders else _default_orders(coeffs.m)
    for r in orders:
        if not 1.0 < r <= coeffs.m + 1e-12:
            raise UsageError(f"order {r:g} outside (1, m={coeffs.m:g}]")
    ops = assemble(coeffs, cfg.grid, cfg.diffusion, cfg.right_bc)
    consts = {r: bound_constants(coeffs, r, cfg.diffusion) for r in orders}

    states: list[tuple[str, DensityState]] = []
    if args.state:
        try:
            st = read_state_csv(args.state, cfg.grid)
        except (OSError, ValueError, GridError) as exc:
            raise UsageError(str(exc)) from exc
        if np.any(st.phi < 0):
            raise UsageError(f"{args.state}: negative density values; the lemma checks need psi >= 0")
        states.append((str(args.state), st))
    elif not args.sweep:
        init = cfg.initial
        st = init if isinstance(init, DensityState) else state_from_phi(cfg.grid, _project(init, cfg.grid))
        states.append(("initial", st))
    rng = np.random.default_rng(args.seed)
    for i in range(args.sweep):
        states.append((f"random_{i}", random_state(cfg.grid, rng)))

    results = []
    failures = {}
    for label, st in states:
        row = _lemma_row(ops, st, orders, consts)
        results.append({"state": label, "orders": row})
        for r, checks in row.items():
            for name, chk in checks.items():
                if not chk["passed"]:
                    failures.setdefault(f"{name}@r={r}", []).append(label)
    payload = _envelope(
        "bounds", scenario=sc.name, seed=args.seed, n_states=len(states), orders=orders,
        constants={f"{r:g}": consts[r].to_dict() for r in orders},
        delta_range=delta_range_claims(coeffs.b, coeffs.delta2 if coeffs.delta2 is not None else consts[orders[0]].delta_r),
        failures={k: len(v) for k, v in failures.items()}, all_passed=not failures,
        states=results if (args.sweep <= 20 or args.verbose) else results[:5],
    )
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bounds.json").write_text(text + "\n")
        print(f"{len(states)} state(s), {sum(len(v) for v in failures.values())} failure(s); report in {out / 'bounds.json'}")
    else:
        print(text)
    return EXIT_OK if not failures else EXIT_FAIL


def _project(f, grid):
    from .grid import project_initial

    return project_initial(f, grid).phi


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------

CONVERGENCE_TARGETS = {"dx_ratio": (4.0, 0.5), "dt_ratio": (2.0, 0.3), "moment_error": 1e-4}


def cmd_converge(args) -> int:
    out = Path(args.out_dir or "out/converge")
    out.mkdir(parents=True, exist_ok=True)
    bat = run_battery(args.grid_refine)
    for key in ("diffusion_dx", "diffusion_dt", "heat_residual"):
        st = bat[key]
        _write_csv(out / f"{key}.csv", [st.parameter, "error", "ratio"],
                   ([r[st.parameter], r["error"], r["ratio"]] for r in st.rows()))
    for key in ("fragmentation_M0", "coagulation_M0"):
        mc = bat[key]
        _write_csv(out / f"{key}.csv", ["t", "simulated", "exact", "error"],
                   ([r["t"], r["simulated"], r["exact"], r["error"]] for r in mc.rows()))
    c_dx, tol_dx = CONVERGENCE_TARGETS["dx_ratio"]
    c_dt, tol_dt = CONVERGENCE_TARGETS["dt_ratio"]
    checks = {
        "dx_ratio": all(abs(r - c_dx) <= tol_dx for r in bat["diffusion_dx"].ratios),
        "dt_ratio": all(abs(r - c_dt) <= tol_dt for r in bat["diffusion_dt"].ratios),
        "fragmentation_M0": bat["fragmentation_M0"].max_error <= CONVERGENCE_TARGETS["moment_error"],
        "coagulation_M0": bat["coagulation_M0"].max_error <= CONVERGENCE_TARGETS["moment_error"],
    }
    payload = _envelope(
        "converge", checks=checks, all_passed=all(checks.values()), seconds=bat["seconds"],
        studies={k: v.to_dict() for k, v in bat.items() if k != "seconds"},
    )
    payload["studies"] = {k: {kk: vv for kk, vv in v.items() if kk != "seconds"} for k, v in payload["studies"].items()}
    write_json(out / "converge.json", payload)
    for name, ok in checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def cmd_scenarios(args) -> int:
    for name in builtin_scenarios():
        sc = load_scenario(name)
        print(f"{name:18s} {sc.description}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coagfrag", description="Coagulation-fragmentation simulator with size diffusion.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        if multi:
            sp.add_argument("--config", required=True, action="append",
                            help="scenario file or builtin name; repeat for a sweep")
        else:
            sp.add_argument("--config", required=True, help="scenario file or builtin name")
        sp.add_argument("--out-dir", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized checks (recorded in outputs)")
        sp.add_argument("--grid-refine", type=int, default=1, metavar="K", help="multiply the number of cells by K")

    sp = sub.add_parser("run", help="integrate a scenario and write CSV/JSON outputs")
    common(sp, multi=True)
    sp.add_argument("--force", action="store_true", help="run even if hypothesis validation fails")
    sp.add_argument("--jobs", type=int, default=1, help="parallel processes for several --config")
    sp.add_argument("--export-operators", action="store_true",
                    help="write the assembled matrices in Matrix Market coordinate format")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check the coefficient hypotheses")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("bounds", help="evaluate the moment inequalities on states")
    common(sp)
    sp.add_argument("--state", help="state CSV with columns x_center,dx,phi")
    sp.add_argument("--sweep", type=int, default=0, metavar="N", help="also check N random states")
    sp.add_argument("--orders", help="comma-separated orders r (default: 1.5,2,2.5,3 up to m)")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("converge", help="refinement studies against closed-form solutions")
    sp.add_argument("--out-dir", help="output directory")
    sp.add_argument("--grid-refine", type=int, default=1, metavar="K")
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("scenarios", help="list the builtin scenarios")
    sp.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "grid_refine", 1) < 1:
        print("error: --grid-refine must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CoagFragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

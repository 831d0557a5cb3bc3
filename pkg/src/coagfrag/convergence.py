"""Grid and time refinement studies against the oracles.

The spatial study propagates with the matrix exponential so that only the
discretization in size remains; the temporal study compares backward-Euler
runs with the semi-discrete reference on the same grid, so that only the
time discretization remains.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .grid import SizeGrid, cell_averages, project_initial
from .operators import assemble
from .oracles import OracleCase, coagulation_case, fragmentation_case, heat_case
from .semigroup import LinearPropagator
from .timestepper import RunConfig, run


@dataclass
class Study:
    """One refinement table; ``ratios[i] = errors[i] / errors[i+1]``."""

    name: str
    parameter: str
    values: list[float]
    errors: list[float]
    ratios: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def __post_init__(self):
        if not self.ratios:
            self.ratios = [a / b if b > 0 else math.inf for a, b in zip(self.errors[:-1], self.errors[1:])]

    def rows(self) -> list[dict]:
        out = []
        for i, (v, e) in enumerate(zip(self.values, self.errors)):
            out.append({"study": self.name, self.parameter: v, "error": e,
                        "ratio": self.ratios[i - 1] if i > 0 else ""})
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "parameter": self.parameter, "values": self.values,
                "errors": self.errors, "ratios": self.ratios, "seconds": self.seconds}


def _l1(grid: SizeGrid, phi, ref) -> float:
    return float(np.sum(np.abs(phi - ref) * grid.widths))


def diffusion_space_study(case: OracleCase | None = None, cells=(32, 64, 128, 256), x_max: float = 10.0,
                          refine: int = 1) -> Study:
    """L1 error of the semi-discrete heat solution at the horizon on uniform grids."""
    case = heat_case() if case is None else case
    t0 = time.perf_counter()
    errs = []
    ns = [n * refine for n in cells]
    for n in ns:
        g = SizeGrid.uniform(n, 1e-14, x_max)
        ops = assemble(case.coeffs, g, diffusion=case.diffusion)
        f = project_initial(case.initial, g)
        phi, _ = LinearPropagator(ops, method="expm").apply(f.phi, case.horizon)
        ref = cell_averages(lambda x: case.exact(case.horizon, x), g)
        errs.append(_l1(g, phi, ref))
    return Study("diffusion_dx", "n_cells", [float(n) for n in ns], errs, seconds=time.perf_counter() - t0)


def diffusion_time_study(case: OracleCase | None = None, steps=(0.02, 0.01, 0.005), n: int = 256,
                         x_max: float = 10.0) -> Study:
    """L1 error of backward-Euler runs against the exact-in-time solution on one grid."""
    case = heat_case() if case is None else case
    t0 = time.perf_counter()
    g = SizeGrid.uniform(n, 1e-14, x_max)
    ops = assemble(case.coeffs, g, diffusion=case.diffusion)
    f = project_initial(case.initial, g)
    ref, _ = LinearPropagator(ops, method="expm").apply(f.phi, case.horizon)
    errs = []
    for dt in steps:
        cfg = RunConfig(case.coeffs, g, f, case.horizon, dt_init=dt, dt_min=dt * 1e-3, dt_max=dt,
                        output_every=case.horizon, diffusion=case.diffusion, name="heat_dt")
        traj = run(cfg, ops)
        errs.append(_l1(g, traj.final.phi, ref))
    return Study("diffusion_dt", "dt", list(steps), errs, seconds=time.perf_counter() - t0)


@dataclass
class MomentCheck:
    name: str
    times: list[float]
    simulated: list[float]
    exact: list[float]
    max_error: float
    seconds: float

    def rows(self) -> list[dict]:
        return [{"study": self.name, "t": t, "simulated": s, "exact": e, "error": abs(s - e)}
                for t, s, e in zip(self.times, self.simulated, self.exact)]

    def to_dict(self) -> dict:
        return {"name": self.name, "max_error": self.max_error, "seconds": self.seconds,
                "times": self.times, "simulated": self.simulated, "exact": self.exact}


def _moment_check(case: OracleCase, grid: SizeGrid, dt: float, n_out: int) -> MomentCheck:
    t0 = time.perf_counter()
    cfg = RunConfig(case.coeffs, grid, case.initial, case.horizon, dt_init=dt, dt_min=dt * 1e-6, dt_max=dt,
                    output_every=case.horizon / n_out, diffusion=case.diffusion, name=case.name)
    traj = run(cfg)
    if not traj.completed:
        raise RuntimeError(f"oracle run {case.name} aborted: {traj.abort_reason}")
    times = [s.t for s in traj.snapshots]
    sim = [float(np.sum(s.phi * grid.widths * grid.centers**case.moment_order)) for s in traj.snapshots]
    ex = [float(case.moment_law(t)) for t in times]
    err = max(abs(a - b) for a, b in zip(sim, ex))
    return MomentCheck(case.name, times, sim, ex, err, time.perf_counter() - t0)


def fragmentation_moment_check(n: int = 2048, dt: float = 1e-2, refine: int = 1) -> MomentCheck:
    """Number ``M0(t) = 1 + t`` under ``a = x``, ``b = 2/y`` without diffusion."""
    return _moment_check(fragmentation_case(), SizeGrid.geometric(n * refine, 1e-6, 1e2), dt, 20)


def coagulation_moment_check(n: int = 512, dt: float = 2.5e-4, refine: int = 1) -> MomentCheck:
    """Number ``M0(1) = 2/3`` under the unit constant kernel from ``exp(-x)``."""
    return _moment_check(coagulation_case(), SizeGrid.geometric(n * refine, 1e-6, 1e3), dt, 10)


def discrete_residual_study(case: OracleCase | None = None, cells=(32, 64, 128, 256), t: float = 0.3,
                            x_max: float = 10.0) -> Study:
    """L1 norm of ``d/dt exact - A exact`` on cell averages, under refinement."""
    case = heat_case() if case is None else case
    errs = []
    h = 1e-5
    for n in cells:
        g = SizeGrid.uniform(n, 1e-14, x_max)
        ops = assemble(case.coeffs, g, diffusion=case.diffusion)
        u = cell_averages(lambda x: case.exact(t, x), g)
        ut = (cell_averages(lambda x: case.exact(t + h, x), g) - cell_averages(lambda x: case.exact(t - h, x), g)) / (2 * h)
        errs.append(_l1(g, ut, ops.A @ u))
    return Study(f"{case.name}_residual", "n_cells", [float(n) for n in cells], errs)


def run_battery(refine: int = 1) -> dict:
    """All oracle studies; returns tables and wall time."""
    t0 = time.perf_counter()
    out = {
        "diffusion_dx": diffusion_space_study(refine=refine),
        "diffusion_dt": diffusion_time_study(),
        "heat_residual": discrete_residual_study(),
        "fragmentation_M0": fragmentation_moment_check(refine=refine),
        "coagulation_M0": coagulation_moment_check(refine=refine),
    }
    out["seconds"] = time.perf_counter() - t0
    return out

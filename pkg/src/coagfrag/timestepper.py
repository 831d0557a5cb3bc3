"""Nonlinear evolution: IMEX steps, adaptive step size and the mass ledger.

Each step treats coagulation explicitly at the current state and the linear
part ``A = D L_diff + L_frag`` by backward Euler, so the implicit matrix is an
M-matrix and the update is nonnegative up to round-off. A step is accepted
only when the explicit coagulation loss removes at most 90% of any occupied
cell; otherwise the step is halved. The ledger records leakage through
``x_max`` (from the implicit flux), coagulation overflow beyond the last
pivot and the mass added by clipping round-off negatives.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .bounds import GronwallBound
from .coefficients import RateCoefficients, eval_ell
from .errors import ConfigError, DtUnderflow, NonContractionError
from .grid import DensityState, MassBudget, SizeGrid, project_initial, state_from_phi
from .operators import DiscreteOperators, SolverCache, assemble, coag_rates
from .semigroup import LinearPropagator, duhamel_evolve

logger = logging.getLogger(__name__)

MODES = ("imex", "duhamel")


@dataclass
class RunConfig:
    """Everything needed to integrate one scenario.

    ``initial`` is either a vectorized density (projected onto ``grid``) or a
    ready :class:`DensityState`. ``output_every`` is the snapshot cadence in
    time units; it defaults to ``T_final / 20``.
    """

    coeffs: RateCoefficients
    grid: SizeGrid
    initial: Callable | DensityState
    T_final: float
    dt_init: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    positivity_tol: float = 1e-12
    output_every: float | None = None
    mode: str = "imex"
    diffusion: float = 1.0
    right_bc: str = "dirichlet"
    ledger_rtol: float = 1e-8
    picard_window: float = 0.05
    picard_steps: int = 64
    picard_tol: float = 1e-10
    name: str = "run"

    def __post_init__(self):
        if not (self.T_final > 0 and math.isfinite(self.T_final)):
            raise ConfigError("T_final must be positive and finite")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ConfigError("need 0 < dt_min <= dt_init <= dt_max")
        if self.mode not in MODES:
            raise ConfigError(f"solver mode must be one of {MODES}, got {self.mode!r}")
        if self.diffusion < 0:
            raise ConfigError("the diffusion coefficient must be nonnegative")
        if self.output_every is None:
            self.output_every = self.T_final / 20.0
        if not self.output_every > 0:
            raise ConfigError("output cadence must be positive")

    def output_times(self) -> np.ndarray:
        n = max(1, int(round(self.T_final / self.output_every)))
        if abs(n * self.output_every - self.T_final) > 1e-12 * self.T_final:
            n = int(math.floor(self.T_final / self.output_every))
            times = self.output_every * np.arange(1, n + 1)
            return np.append(times[times < self.T_final * (1 - 1e-12)], self.T_final)
        return self.T_final * np.arange(1, n + 1) / n


@dataclass
class MomentReport:
    """Per-step moment series; ``bounds`` holds comparison trajectories."""

    m: float
    t: list[float] = field(default_factory=list)
    M0: list[float] = field(default_factory=list)
    M1: list[float] = field(default_factory=list)
    Mm: list[float] = field(default_factory=list)
    E0: list[float] = field(default_factory=list)
    Y: list[float] = field(default_factory=list)
    bounds: dict[str, list[float]] = field(default_factory=dict)

    def record(self, state: DensityState, ell: np.ndarray) -> None:
        g = state.grid
        mass = state.phi * g.widths
        aw = np.abs(mass)
        x = g.centers
        xm = x**self.m
        self.t.append(state.t)
        self.M0.append(float(mass.sum()))
        self.M1.append(float(x @ mass))
        self.Mm.append(float(xm @ mass))
        self.E0.append(float((x + xm) @ aw))
        self.Y.append(float(ell @ aw))

    def as_arrays(self) -> dict[str, np.ndarray]:
        out = {k: np.asarray(getattr(self, k)) for k in ("t", "M0", "M1", "Mm", "E0", "Y")}
        out.update({k: np.asarray(v) for k, v in self.bounds.items()})
        return out


@dataclass
class Trajectory:
    """Snapshots at the output cadence, per-step moments and the ledger."""

    config: RunConfig
    snapshots: list[DensityState]
    moments: MomentReport
    ledger: list[dict]
    status: str = "completed"
    abort_reason: str | None = None
    steps_accepted: int = 0
    steps_rejected: int = 0
    min_phi: float = 0.0
    wall_time: float = 0.0
    picard: list[dict] = field(default_factory=list)

    @property
    def final(self) -> DensityState:
        return self.snapshots[-1]

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def clip_total(self) -> float:
        return self.final.budget.clip

    @property
    def max_ledger_residual(self) -> float:
        return max((row["residual"] for row in self.ledger), default=0.0)

    def summary(self) -> dict:
        b = self.final.budget
        return {
            "status": self.status,
            "abort_reason": self.abort_reason,
            "t_final": self.final.t,
            "steps_accepted": self.steps_accepted,
            "steps_rejected": self.steps_rejected,
            "min_phi": self.min_phi,
            "max_ledger_residual": self.max_ledger_residual,
            "budget": {"initial": b.initial, "leakage": b.leakage, "overflow": b.overflow, "clip": b.clip},
            "wall_time_s": self.wall_time,
        }


@dataclass(frozen=True)
class StepResult:
    state: DensityState
    dt: float
    halvings: int
    min_before_clip: float


def _ledger_row(state: DensityState) -> dict:
    g = state.grid
    interior = float(g.centers @ (state.phi * g.widths))
    b = state.budget
    expected = b.expected_interior()
    return {
        "t": state.t,
        "interior": interior,
        "leakage": b.leakage,
        "overflow": b.overflow,
        "clip": b.clip,
        "expected": expected,
        "residual": abs(interior - expected) / max(abs(b.initial), 1e-300),
    }


def _clip(state_phi: np.ndarray, grid: SizeGrid) -> tuple[np.ndarray, float, float]:
    """Zero out negatives; return the new values, the added mass and the prior minimum."""
    lo = float(state_phi.min()) if state_phi.size else 0.0
    neg = state_phi < 0
    if not neg.any():
        return state_phi, 0.0, lo
    added = -float(np.sum(grid.centers[neg] * state_phi[neg] * grid.widths[neg]))
    out = state_phi.copy()
    out[neg] = 0.0
    return out, added, lo


def step(state: DensityState, dt: float, ops: DiscreteOperators, cache: SolverCache | None = None,
         dt_min: float = 1e-12, loss_fraction: float = 0.9) -> StepResult:
    """One IMEX step, halving ``dt`` until the explicit loss is admissible.

    Raises
    ------
    DtUnderflow
        If the admissible step is below ``dt_min``.
    FloatingPointError
        If the update is not finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    cache = SolverCache(ops) if cache is None else cache
    phi = state.phi
    cr = coag_rates(ops, phi)
    occupied = phi > 0
    nu_max = float(cr.nu[occupied].max()) if occupied.any() else 0.0
    halvings = 0
    while dt * nu_max > loss_fraction:
        dt *= 0.5
        halvings += 1
        if dt < dt_min:
            raise DtUnderflow(f"step size fell below dt_min={dt_min:g} at t={state.t:g}; blow-up suspected",
                              state.t, dt)
    new = cache.backward_euler(dt).solve(phi + dt * cr.rate)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError(f"nonfinite density at t={state.t + dt:g}")
    leak = dt * ops.leak_rate(new)
    new, clip, lo = _clip(new, ops.grid)
    b = state.budget
    budget = MassBudget(b.initial, b.leakage + leak, b.overflow + dt * cr.overflow, b.clip + clip)
    return StepResult(state.with_phi(new, t=state.t + dt, budget=budget), dt, halvings, lo)


def _initial_state(config: RunConfig) -> DensityState:
    init = config.initial
    if isinstance(init, DensityState):
        if init.grid is not config.grid and not np.array_equal(init.grid.edges, config.grid.edges):
            raise ConfigError("the initial state does not live on the configured grid")
        return state_from_phi(config.grid, init.phi)
    return project_initial(init, config.grid)


def run(config: RunConfig, ops: DiscreteOperators | None = None) -> Trajectory:
    """Integrate ``config`` to ``T_final`` or until an abort condition.

    Abort reasons (recorded, not raised): ``dt underflow``, ``nonfinite
    values``, ``ledger violation``, ``picard non-contraction``.
    """
    t0 = time.perf_counter()
    if ops is None:
        ops = assemble(config.coeffs, config.grid, config.diffusion, config.right_bc)
    state = _initial_state(config)
    ell = eval_ell(config.grid.centers, config.coeffs)
    report = MomentReport(m=config.coeffs.m)
    report.record(state, ell)
    traj = Trajectory(config, [state], report, [_ledger_row(state)], min_phi=float(state.phi.min()))
    try:
        if config.mode == "imex":
            _run_imex(config, ops, state, traj, ell)
        else:
            _run_duhamel(config, ops, state, traj, ell)
    except DtUnderflow as exc:
        traj.status, traj.abort_reason = "aborted", f"dt underflow: {exc}"
    except FloatingPointError as exc:
        traj.status, traj.abort_reason = "aborted", f"nonfinite values: {exc}"
    except _LedgerViolation as exc:
        traj.status, traj.abort_reason = "aborted", f"ledger violation: {exc}"
    except _PicardFailure as exc:
        traj.status, traj.abort_reason = "aborted", f"picard non-contraction: {exc}"
    if traj.status != "completed":
        logger.warning("run %s aborted: %s", config.name, traj.abort_reason)
    traj.wall_time = time.perf_counter() - t0
    return traj


class _LedgerViolation(Exception):
    pass


class _PicardFailure(Exception):
    pass


def _snapshot(config: RunConfig, state: DensityState, traj: Trajectory) -> None:
    row = _ledger_row(state)
    traj.ledger.append(row)
    traj.snapshots.append(state)
    if row["residual"] > config.ledger_rtol:
        raise _LedgerViolation(f"residual {row['residual']:.3g} at t={state.t:g}")


def _run_imex(config: RunConfig, ops: DiscreteOperators, state: DensityState, traj: Trajectory, ell) -> None:
    cache = SolverCache(ops)
    dt_nom = config.dt_init
    for t_out in config.output_times():
        while state.t < t_out - 1e-13 * config.T_final:
            remaining = t_out - state.t
            dt = min(dt_nom, config.dt_max)
            # avoid a sliver step right before the output time
            if dt >= remaining or remaining - dt < 1e-9 * dt:
                dt = remaining
            res = step(state, dt, ops, cache, dt_min=config.dt_min)
            state = res.state
            traj.steps_accepted += 1
            traj.steps_rejected += res.halvings
            traj.min_phi = min(traj.min_phi, res.min_before_clip)
            traj.moments.record(state, ell)
            dt_nom = res.dt if res.halvings else min(2.0 * dt_nom, config.dt_max)
        state = state.with_phi(state.phi, t=float(t_out))
        _snapshot(config, state, traj)


def _run_duhamel(config: RunConfig, ops: DiscreteOperators, state: DensityState, traj: Trajectory, ell) -> None:
    prop = LinearPropagator(ops)
    for t_out in config.output_times():
        window = min(config.picard_window, t_out - state.t)
        try:
            res = duhamel_evolve(prop, state, float(t_out), window, config.picard_steps, config.picard_tol)
        except NonContractionError as exc:
            raise _PicardFailure(str(exc)) from exc
        for pr in res.results:
            traj.picard.append({"t_end": float(pr.times[-1]), "iterations": pr.iterations,
                                "contraction": pr.contraction, "converged": pr.converged})
            traj.steps_accepted += pr.times.size - 1
            for k in range(1, pr.times.size):
                traj.moments.record(state.with_phi(pr.phis[k], t=float(pr.times[k])), ell)
        st = res.state
        phi, clip, lo = _clip(st.phi, ops.grid)
        traj.min_phi = min(traj.min_phi, lo)
        budget = replace(st.budget, clip=st.budget.clip + clip)
        state = st.with_phi(phi, t=float(t_out), budget=budget)
        _snapshot(config, state, traj)


def global_existence_monitor(traj: Trajectory, coeffs: RateCoefficients, bound: GronwallBound | None = None,
                             slack: float = 1.1) -> dict:
    """Suprema of the ``Y`` and ``E0`` norms over the run, compared with an a-priori bound.

    The ``E0`` criterion applies when ``K*`` is known. With ``bound`` given,
    the simulated ``int (x + x^r) phi`` is compared with ``slack`` times the
    bound at every recorded time; headroom is ``log10(bound / simulated)``.
    """
    mom = traj.moments.as_arrays()
    out = {
        "sup_Y": float(np.max(mom["Y"])),
        "sup_E0": float(np.max(mom["E0"])),
        "e0_criterion_applicable": coeffs.Kstar is not None,
        "conclusive": traj.completed,
        "flag": False,
    }
    if not traj.completed:
        out["note"] = "run aborted; the existence criteria are inconclusive"
    if bound is not None:
        x = traj.config.grid.centers
        widths = traj.config.grid.widths
        # recompute the order-r quantity at the snapshots and at every recorded step
        r = bound.r
        if abs(r - coeffs.m) < 1e-12:
            sim = mom["E0"]
        else:
            sim = np.array([float((x + x**r) @ (np.abs(s.phi) * widths)) for s in traj.snapshots])
            mom = {"t": np.array([s.t for s in traj.snapshots])}
        log_bound = bound.log_value(mom["t"]) / math.log(10.0)
        with np.errstate(divide="ignore"):
            log_sim = np.log10(np.maximum(sim, 1e-300))
        headroom = log_bound - log_sim
        out.update({
            "bound_order": r,
            "min_headroom_log10": float(np.min(headroom)),
            "flag": bool(np.any(headroom < -math.log10(slack))),
        })
    return out

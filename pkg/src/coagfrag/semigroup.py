"""Linear propagator of ``A = D L_diff + L_frag`` and the Duhamel/Picard mode.

``U(t)`` is applied with Crank-Nicolson substeps no longer than the cap
``rho * min(dx)**2``. On strongly graded grids that cap can demand billions of
substeps; beyond ``max_substeps`` the propagator switches to relaxed
substeps of at most ``max_step`` and starts with four backward-Euler half
steps (Rannacher smoothing) that damp the stiff modes CN would otherwise
leave undamped. The mass removed by the linear part (right-boundary leakage
plus absorption by an optional potential) is accumulated from the same
discrete fluxes the solver uses, so the mass identity is exact up to the
linear-solve round-off. The matrix exponential is available as an explicit
method for moderate grids.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .coefficients import eval_V
from .errors import NonContractionError, SingularResolventError
from .grid import DensityState, norm_E0, norm_Y
from .operators import DiscreteOperators, ShiftedSolver, apply_coag

logger = logging.getLogger(__name__)


class LinearPropagator:
    """Approximation of the semigroup generated by ``A - diag(V)``.

    Parameters
    ----------
    ops : DiscreteOperators
    potential : array_like, optional
        Nonnegative absorption ``V`` at the pivots.
    method : {"cn", "expm"}
    rho : float
        Crank-Nicolson substep cap in units of ``min(dx)**2``.
    max_substeps : int
        Largest number of capped substeps before switching to relaxed ones.
    max_step : float
        Relaxed substep length.
    """

    def __init__(self, ops: DiscreteOperators, potential=None, method: str = "cn",
                 rho: float = 2.0, max_substeps: int = 64, max_step: float = 1e-3):
        if method not in ("cn", "expm"):
            raise ValueError(f"unknown propagation method {method!r}")
        self.ops = ops
        g = ops.grid
        self.V = np.zeros(g.n) if potential is None else np.asarray(potential, dtype=float)
        if np.any(self.V < 0):
            raise ValueError("the potential must be nonnegative")
        self.method = method
        self.rho = rho
        self.max_substeps = max_substeps
        self.max_step = max_step
        self.generator = ops.A.toarray() - np.diag(self.V)
        self.removal_weights = ops.leak_weights + g.centers * g.widths * self.V
        self.substep_cap = rho * float(np.min(g.widths)) ** 2
        self._cn: dict[float, ShiftedSolver] = {}
        self._expm: dict[float, np.ndarray] = {}

    @classmethod
    def with_potential(cls, ops: DiscreteOperators, gamma: float, **kwargs) -> "LinearPropagator":
        return cls(ops, potential=eval_V(ops.grid.centers, gamma, ops.coeffs), **kwargs)

    # -- method selection ---------------------------------------------------

    def substeps(self, t: float) -> tuple[int, bool]:
        """Number of CN substeps for ``t`` and whether the cap had to be relaxed."""
        capped = max(1, math.ceil(t / self.substep_cap - 1e-9))
        if capped <= self.max_substeps:
            return capped, False
        return max(4, math.ceil(t / self.max_step - 1e-9)), True

    # -- exponential --------------------------------------------------------

    def _augmented_exp(self, t: float) -> np.ndarray:
        key = float(t)
        if key not in self._expm:
            n = self.generator.shape[0]
            aug = np.zeros((n + 1, n + 1))
            aug[:n, :n] = self.generator
            aug[n, :n] = self.removal_weights
            self._expm[key] = scipy.linalg.expm(t * aug)
        return self._expm[key]

    # -- Crank-Nicolson -----------------------------------------------------

    def _cn_solver(self, delta: float) -> ShiftedSolver:
        key = float(delta)
        if key not in self._cn:
            self._cn[key] = ShiftedSolver(self.ops, 1.0, 0.5 * key, potential=0.5 * key * self.V)
        return self._cn[key]

    def _apply_generator(self, phi: np.ndarray) -> np.ndarray:
        return self.generator @ phi

    # -- public -------------------------------------------------------------

    def apply(self, phi, t: float) -> tuple[np.ndarray, float]:
        """Return ``U(t) phi`` and the mass removed by the linear part."""
        phi = np.asarray(phi, dtype=float)
        if t < 0:
            raise ValueError("propagation time must be nonnegative")
        if t == 0:
            return phi.copy(), 0.0
        if self.method == "expm":
            e = self._augmented_exp(t)
            n = phi.size
            return e[:n, :n] @ phi, float(e[n, :n] @ phi)
        steps, relaxed = self.substeps(t)
        delta = t / steps
        # (I - delta/2 A) serves both the CN step and the BE half step
        solver = self._cn_solver(delta)
        removed = 0.0
        cur = phi.copy()
        if relaxed:
            for _ in range(4):
                cur = solver.solve(cur)
                removed += 0.5 * delta * float(self.removal_weights @ cur)
            steps -= 2
        for _ in range(steps):
            nxt = solver.solve(cur + 0.5 * delta * self._apply_generator(cur))
            removed += 0.5 * delta * float(self.removal_weights @ (cur + nxt))
            cur = nxt
        return cur, removed

    def propagate(self, f: DensityState, t: float) -> DensityState:
        """``U(t) f`` as a state; the removed mass is added to the budget's leakage."""
        phi, removed = self.apply(f.phi, t)
        budget = replace(f.budget, leakage=f.budget.leakage + removed)
        return f.with_phi(phi, t=f.t + t, budget=budget)

    def resolvent_solve(self, lam: float, g, with_V: bool = False) -> np.ndarray:
        """Solve ``(lam - A + V) u = g``.

        Raises
        ------
        SingularResolventError
            If the system is singular or the solution is not finite; retry with
            a larger ``lam``.
        """
        if not lam > 0:
            raise SingularResolventError("the resolvent needs lam > 0; raise lam")
        g = np.asarray(g, dtype=float)
        try:
            solver = ShiftedSolver(self.ops, lam, 1.0, potential=self.V if with_V else None)
            u = solver.solve(g)
        except (np.linalg.LinAlgError, ValueError, ZeroDivisionError) as exc:
            raise SingularResolventError(f"resolvent system singular at lam={lam:g}; raise lam") from exc
        if not np.all(np.isfinite(u)):
            raise SingularResolventError(f"resolvent solution not finite at lam={lam:g}; raise lam")
        return u


def resolvent_solve(ops: DiscreteOperators, lam: float, g, with_V: bool = False, gamma: float = 1.0) -> np.ndarray:
    """Convenience wrapper building a propagator with ``V = eval_V(gamma)`` when requested."""
    prop = LinearPropagator.with_potential(ops, gamma) if with_V else LinearPropagator(ops)
    return prop.resolvent_solve(lam, g, with_V=with_V)


def propagate(ops: DiscreteOperators, f: DensityState, t: float, **kwargs) -> DensityState:
    return LinearPropagator(ops, **kwargs).propagate(f, t)


# ---------------------------------------------------------------------------
# Duhamel / Picard
# ---------------------------------------------------------------------------


@dataclass
class PicardResult:
    """Outcome of Picard iteration on one horizon.

    ``phis[k]`` is the iterate at ``times[k]``; ``diffs[n]`` is the time-sup of
    the E0 distance between iterates ``n`` and ``n+1``; ``ratios`` are the
    quotients of successive entries of ``diffs``.
    """

    times: np.ndarray
    phis: np.ndarray
    diffs: list[float]
    ratios: list[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.diffs)

    @property
    def contraction(self) -> float:
        """Largest measured ratio, or 0 when fewer than two differences exist."""
        return max(self.ratios) if self.ratios else 0.0


def _e0(ops: DiscreteOperators, phi) -> float:
    g = ops.grid
    w = g.centers + g.centers**ops.coeffs.m
    return float(np.sum(w * np.abs(phi) * g.widths))


def duhamel_picard(prop: LinearPropagator, f: DensityState, T: float, n_steps: int = 64,
                   tol: float = 1e-10, max_iter: int = 60) -> PicardResult:
    """Picard iteration for the mild formulation on ``[0, T]``.

    The convolution integral is a trapezoidal sum on ``n_steps`` uniform
    intervals. ``tol`` is relative to ``||f||_E0``.

    Raises
    ------
    NonContractionError
        When three consecutive ratios of successive differences are >= 1.
    """
    if not T > 0:
        raise ValueError("the horizon must be positive")
    ops = prop.ops
    dt = T / n_steps
    n = ops.grid.n
    base = np.empty((n_steps + 1, n))
    base[0] = f.phi
    for k in range(1, n_steps + 1):
        base[k] = prop.apply(base[k - 1], dt)[0]
    scale = max(_e0(ops, f.phi), 1e-300)
    cur = base.copy()
    diffs: list[float] = []
    ratios: list[float] = []
    streak = 0
    converged = False
    for _ in range(max_iter):
        g = np.array([apply_coag(ops, cur[k]) for k in range(n_steps + 1)])
        new = np.empty_like(cur)
        new[0] = base[0]
        J = 0.5 * g[0]
        for k in range(1, n_steps + 1):
            J = prop.apply(J, dt)[0] + g[k]
            new[k] = base[k] + dt * (J - 0.5 * g[k])
        diff = max(_e0(ops, new[k] - cur[k]) for k in range(n_steps + 1))
        if diffs:
            ratio = diff / diffs[-1] if diffs[-1] > 0 else 0.0
            ratios.append(ratio)
            streak = streak + 1 if ratio >= 1.0 else 0
        diffs.append(diff)
        cur = new
        if diff <= tol * scale:
            converged = True
            break
        if streak >= 3:
            raise NonContractionError(f"Picard iteration does not contract on T={T:g}; horizon too long", diffs)
    times = f.t + dt * np.arange(n_steps + 1)
    return PicardResult(times, cur, diffs, ratios, converged)


@dataclass
class DuhamelRun:
    state: DensityState
    windows: list[tuple[float, float]]
    results: list[PicardResult]


def duhamel_evolve(prop: LinearPropagator, f: DensityState, T_final: float, window: float,
                   n_steps: int = 64, tol: float = 1e-10, max_iter: int = 60,
                   min_window: float = 1e-8) -> DuhamelRun:
    """March the Picard solver over consecutive windows, halving on non-contraction."""
    state = f
    windows: list[tuple[float, float]] = []
    results: list[PicardResult] = []
    ops = prop.ops
    h = min(window, T_final)
    while state.t < T_final * (1 - 1e-14):
        h = min(h, T_final - state.t)
        try:
            res = duhamel_picard(prop, state, h, n_steps, tol, max_iter)
        except NonContractionError:
            h *= 0.5
            if h < min_window:
                raise
            logger.info("Picard did not contract; halving the window to %g", h)
            continue
        phi = res.phis[-1]
        m_new = float(np.sum(ops.grid.centers * phi * ops.grid.widths))
        # the mass not found in the interior left through the linear part or overflowed
        b = state.budget
        lost = b.expected_interior() - m_new
        budget = replace(b, leakage=b.leakage + lost)
        state = state.with_phi(phi, t=state.t + h, budget=budget)
        windows.append((state.t - h, state.t))
        results.append(res)
    return DuhamelRun(state, windows, results)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def smoothing_diagnostic(prop: LinearPropagator, f: DensityState, t_list) -> list[dict]:
    """Table of ``t**theta ||U(t) f||_Y / ||f||_E0``; purely informative."""
    coeffs = prop.ops.coeffs
    e0 = norm_E0(f, coeffs.m)
    rows = []
    for t in t_list:
        if t <= 0:
            continue
        ut = prop.propagate(f, t)
        val = 0.0 if e0 == 0 else t**coeffs.theta * norm_Y(ut, coeffs) / e0
        rows.append({"t": float(t), "value": float(val)})
    return rows

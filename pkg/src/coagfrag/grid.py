"""Size grids, density states, moments and weighted norms."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .coefficients import RateCoefficients, eval_ell
from .errors import GridError, TruncationError

logger = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SizeGrid:
    """Cell-centered discretization of ``(x_min, x_max)``.

    The left Dirichlet condition lives at ``x = 0`` (a ghost value across
    ``(0, x_min)``); the right one at ``x_max``.
    """

    edges: np.ndarray
    spacing: str = "custom"

    def __post_init__(self):
        e = _frozen(self.edges)
        if e.ndim != 1 or e.size < 3:
            raise GridError("a grid needs at least two cells")
        if not (e[0] > 0 and np.all(np.diff(e) > 0) and np.all(np.isfinite(e))):
            raise GridError("grid edges must be positive, finite and strictly increasing")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "centers", _frozen(0.5 * (e[:-1] + e[1:])))
        object.__setattr__(self, "widths", _frozen(np.diff(e)))

    @classmethod
    def geometric(cls, n: int = 512, x_min: float = 1e-4, x_max: float = 1e3) -> "SizeGrid":
        if not 0 < x_min < x_max:
            raise GridError("need 0 < x_min < x_max")
        return cls(np.geomspace(x_min, x_max, n + 1), "geometric")

    @classmethod
    def uniform(cls, n: int, x_min: float, x_max: float) -> "SizeGrid":
        if not 0 < x_min < x_max:
            raise GridError("need 0 < x_min < x_max")
        return cls(np.linspace(x_min, x_max, n + 1), "uniform")

    @property
    def n(self) -> int:
        return self.centers.size

    @property
    def x_min(self) -> float:
        return float(self.edges[0])

    @property
    def x_max(self) -> float:
        return float(self.edges[-1])

    def refine(self, k: int) -> "SizeGrid":
        """Same extent and spacing type with ``k`` times as many cells."""
        if k < 1:
            raise GridError("refinement factor must be >= 1")
        if self.spacing == "geometric":
            return SizeGrid.geometric(self.n * k, self.x_min, self.x_max)
        if self.spacing == "uniform":
            return SizeGrid.uniform(self.n * k, self.x_min, self.x_max)
        sub = [np.linspace(lo, hi, k + 1)[:-1] for lo, hi in zip(self.edges[:-1], self.edges[1:])]
        return SizeGrid(np.concatenate(sub + [self.edges[-1:]]), self.spacing)

    def fraction_above(self, cut: float = 1.0) -> np.ndarray:
        """Share of each cell lying in ``(cut, inf)``; the cell containing ``cut`` is split proportionally."""
        lo = np.maximum(self.edges[:-1], cut)
        return np.clip((self.edges[1:] - lo) / self.widths, 0.0, 1.0)

    def conforms(self, phi) -> bool:
        return np.shape(phi) == (self.n,)

    def describe(self) -> dict:
        return {"spacing": self.spacing, "n": self.n, "x_min": self.x_min, "x_max": self.x_max}


@dataclass(frozen=True)
class MassBudget:
    """Cumulative mass accounting for a run.

    ``initial`` is the first moment of the starting state; ``leakage`` is the
    mass that left through ``x_max`` by diffusion; ``overflow`` the mass
    created by coagulation beyond the last pivot; ``clip`` the (signed) mass
    added by zeroing small negative values.
    """

    initial: float = 0.0
    leakage: float = 0.0
    overflow: float = 0.0
    clip: float = 0.0

    def expected_interior(self) -> float:
        return self.initial - self.leakage - self.overflow + self.clip


@dataclass(frozen=True, eq=False)
class DensityState:
    """Cell-averaged density on a grid, with time and mass budget."""

    grid: SizeGrid
    phi: np.ndarray
    t: float = 0.0
    budget: MassBudget = field(default_factory=MassBudget)

    def __post_init__(self):
        phi = _frozen(self.phi)
        if not self.grid.conforms(phi):
            raise GridError(f"state of shape {phi.shape} does not match a grid of {self.grid.n} cells")
        object.__setattr__(self, "phi", phi)

    def with_phi(self, phi, t: float | None = None, budget: MassBudget | None = None) -> "DensityState":
        return DensityState(self.grid, phi, self.t if t is None else t, self.budget if budget is None else budget)

    def ledger_residual(self) -> float:
        """Relative mismatch between the interior mass and the budget."""
        interior = moment(self, 1.0)
        scale = max(abs(self.budget.initial), 1e-300)
        return abs(interior - self.budget.expected_interior()) / scale


def weighted_sum(grid: SizeGrid, phi, weight) -> float:
    return float(np.sum(np.asarray(weight) * np.asarray(phi) * grid.widths))


def moment(state: DensityState, r: float) -> float:
    """Midpoint moment ``sum x_i**r phi_i dx_i``."""
    g = state.grid
    return weighted_sum(g, state.phi, g.centers**r)


def norm_Xr(state: DensityState, r: float) -> float:
    g = state.grid
    return weighted_sum(g, np.abs(state.phi), g.centers**r)


def norm_E0(state: DensityState, m: float) -> float:
    """``M_1(|phi|) + M_m(|phi|)``."""
    return norm_Xr(state, 1.0) + norm_Xr(state, m)


def norm_Y(state: DensityState, coeffs: RateCoefficients) -> float:
    g = state.grid
    return weighted_sum(g, np.abs(state.phi), eval_ell(g.centers, coeffs))


def cell_averages(f: Callable, grid: SizeGrid) -> np.ndarray:
    """Four-point Gauss-Legendre cell averages of ``f``."""
    half = 0.5 * grid.widths
    pts = grid.centers[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.asarray(f(pts), dtype=float)
    if vals.shape != pts.shape:
        vals = np.broadcast_to(vals, pts.shape)
    return 0.5 * vals @ _GL_WEIGHTS


def project_initial(f: Callable, grid: SizeGrid, tail_rtol: float = 1e-12) -> DensityState:
    """Project an initial density onto the grid.

    Parameters
    ----------
    f : callable
        Vectorized nonnegative density.
    grid : SizeGrid
    tail_rtol : float
        Largest admissible mass beyond ``x_max`` relative to the projected mass.

    Raises
    ------
    ValueError
        If ``f`` is negative at a quadrature node.
    TruncationError
        If ``f`` carries mass beyond ``x_max``.
    """
    half = 0.5 * grid.widths
    pts = grid.centers[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.broadcast_to(np.asarray(f(pts), dtype=float), pts.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("initial density is not finite on the grid")
    if np.any(vals < 0):
        raise ValueError("initial density must be nonnegative")
    phi = 0.5 * vals @ _GL_WEIGHTS
    mass = float(np.sum(grid.centers * phi * grid.widths))

    probe = grid.x_max * np.array([1.001, 1.1, 1.5, 2.0, 4.0, 10.0])
    if np.any(np.asarray(f(probe), dtype=float) > 0):
        tail, _ = integrate.quad(lambda x: x * float(f(np.array([x]))[0]), grid.x_max, 10 * grid.x_max, limit=200)
        if tail > tail_rtol * max(mass, 1e-300):
            msg = f"initial density carries mass {tail:.3g} beyond x_max = {grid.x_max:g}; it would be truncated"
            warnings.warn(msg, stacklevel=2)
            raise TruncationError(msg)
    budget = MassBudget(initial=mass)
    return DensityState(grid, phi, 0.0, budget)


def state_from_phi(grid: SizeGrid, phi, t: float = 0.0) -> DensityState:
    """Wrap raw cell values, starting a fresh budget at the current mass."""
    phi = np.asarray(phi, dtype=float)
    return DensityState(grid, phi, t, MassBudget(initial=float(np.sum(grid.centers * phi * grid.widths))))


def random_state(grid: SizeGrid, rng: np.random.Generator, n_modes: int = 3, support: tuple | None = None) -> DensityState:
    """Smooth random nonnegative state vanishing at 0 and decaying at ``x_max``.

    A mixture ``sum_k c_k x**p_k exp(-x / s_k)`` with ``p_k`` in ``[1, 3]`` and
    ``s_k`` log-uniform in ``[1e-2, 20]``. ``support`` optionally restricts the
    profile to an interval by zeroing cells outside it.
    """
    c = rng.uniform(0.1, 1.0, n_modes)
    p = rng.uniform(1.0, 3.0, n_modes)
    s = np.exp(rng.uniform(np.log(1e-2), np.log(20.0), n_modes))
    x = grid.centers
    phi = np.zeros_like(x)
    for ck, pk, sk in zip(c, p, s):
        phi += ck * (x / sk) ** pk * np.exp(-x / sk) / sk
    if support is not None:
        phi = np.where((x > support[0]) & (x < support[1]), phi, 0.0)
    return state_from_phi(grid, phi)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------


def write_state_csv(path: str | Path, state: DensityState) -> None:
    g = state.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_center", "dx", "phi"])
        for xc, dx, ph in zip(g.centers, g.widths, state.phi):
            w.writerow([repr(float(xc)), repr(float(dx)), repr(float(ph))])


def read_state_csv(path: str | Path, grid: SizeGrid | None = None, rtol: float = 1e-9) -> DensityState:
    """Read a ``x_center,dx,phi`` CSV.

    If ``grid`` is given the file must conform to it; otherwise a grid is
    rebuilt from the centers and widths.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x_center", "dx", "phi"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = [(float(r["x_center"]), float(r["dx"]), float(r["phi"])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    xc, dx, phi = (np.array(col) for col in zip(*rows))
    if grid is None:
        edges = np.concatenate([xc - 0.5 * dx, [xc[-1] + 0.5 * dx[-1]]])
        grid = SizeGrid(edges, "custom")
    elif grid.n != xc.size or not np.allclose(grid.centers, xc, rtol=rtol, atol=0):
        raise GridError(f"{path}: state does not conform to the configured grid")
    return state_from_phi(grid, phi)

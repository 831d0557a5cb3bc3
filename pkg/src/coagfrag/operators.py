"""Discrete diffusion, fragmentation and coagulation operators.

Diffusion is a cell-centered finite-volume second difference with a ghost
value at ``x = 0`` and a Dirichlet (or no-flux) condition at ``x_max``.
Fragmentation and coagulation use fixed-pivot sectional schemes: each newborn
particle is shared between the two pivots that bracket its size so that number
and mass are both preserved.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .coefficients import RateCoefficients, eval_ell
from .errors import EvaluationError, GridError
from .grid import DensityState, SizeGrid

logger = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class CoagTable:
    """Upper-triangular list of interacting pivot pairs ``i <= j``.

    ``tgt`` holds the lower bracketing pivot of ``x_i + x_j`` (``-1`` when the
    sum lies beyond ``x_max``) and ``whi`` the share sent to ``tgt + 1``. A
    nonpositive ``whi`` on the last pivot means the whole newborn goes there
    with number weight ``1 - whi``.
    """

    pi: np.ndarray
    pj: np.ndarray
    kij: np.ndarray
    tgt: np.ndarray
    whi: np.ndarray
    kmat: np.ndarray

    @property
    def empty(self) -> bool:
        return self.pi.size == 0


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Assembled operators on one grid. Nothing here is mutated after assembly."""

    grid: SizeGrid
    coeffs: RateCoefficients
    diffusion: float
    right_bc: str
    diff_lower: np.ndarray
    diff_diag: np.ndarray
    diff_upper: np.ndarray
    L_diff: sp.csr_matrix
    L_frag: sp.csr_matrix
    frag_renorm: np.ndarray
    leak_weights: np.ndarray
    coag: CoagTable
    a_values: np.ndarray

    @property
    def has_frag(self) -> bool:
        return self.L_frag.nnz > 0

    @property
    def A(self) -> sp.csr_matrix:
        """Linear generator ``D L_diff + L_frag``."""
        return (self.diffusion * self.L_diff + self.L_frag).tocsr()

    def leak_rate(self, phi) -> float:
        """Mass flux leaving the grid under the linear part."""
        return float(self.leak_weights @ np.asarray(phi))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _diffusion_diagonals(grid: SizeGrid, right_bc: str):
    x, dx = grid.centers, grid.widths
    n = grid.n
    dist = np.empty(n + 1)
    dist[0] = x[0]
    dist[1:-1] = np.diff(x)
    dist[-1] = grid.x_max - x[-1]
    inv = 1.0 / dist
    if right_bc == "noflux":
        inv[-1] = 0.0
    elif right_bc != "dirichlet":
        raise ValueError(f"unknown right boundary condition {right_bc!r}")
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[1:] = inv[1:-1] / dx[1:]
    upper[:-1] = inv[1:-1] / dx[:-1]
    diag = -(inv[:-1] + inv[1:]) / dx
    return lower, diag, upper


def _leak_weights(grid: SizeGrid, right_bc: str, diffusion: float) -> np.ndarray:
    c = np.zeros(grid.n)
    if right_bc == "dirichlet":
        c[-1] = diffusion * grid.x_max / (grid.x_max - grid.centers[-1])
    else:
        # zero number flux still lets mass out: d/dt M1 = -phi(x_max)
        c[-1] = diffusion
    return c


def _bracket_weights_powerlaw(b, x, j):
    """Closed-form pivot weights for fragments of a parent at pivot ``j``."""
    y = x[j]
    lo = x[:j]
    hi = x[1 : j + 1]
    h = hi - lo
    i0 = b.partial_moment(0.0, lo, hi, y)
    i1 = b.partial_moment(1.0, lo, hi, y)
    below = float(b.partial_moment(1.0, 0.0, x[0], y)) / x[0]
    return (hi * i0 - i1) / h, (i1 - lo * i0) / h, below


def _bracket_weights_quadrature(b, x, j):
    """Gauss-Legendre pivot weights for a general daughter distribution."""
    y = x[j]
    lo = x[:j]
    hi = x[1 : j + 1]
    h = hi - lo
    mid = 0.5 * (lo + hi)
    v = mid[:, None] + 0.5 * h[:, None] * _GL_NODES[None, :]
    bv = np.asarray(b(v, y), dtype=float)
    w = 0.5 * h[:, None] * _GL_WEIGHTS[None, :]
    to_lo = np.sum(w * bv * (hi[:, None] - v), axis=1) / h
    to_hi = np.sum(w * bv * (v - lo[:, None]), axis=1) / h
    v0 = 0.5 * x[0] * (1.0 + _GL_NODES)
    below = float(np.sum(0.5 * x[0] * _GL_WEIGHTS * v0 * np.asarray(b(v0, y), dtype=float))) / x[0]
    return to_lo, to_hi, below


def _assemble_frag(coeffs: RateCoefficients, grid: SizeGrid):
    x, dx = grid.centers, grid.widths
    n = grid.n
    a = np.asarray(coeffs.a(x), dtype=float)
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise EvaluationError("fragmentation rate must be finite and nonnegative on the grid")
    renorm = np.ones(n)
    if np.all(a == 0.0):
        return sp.csr_matrix((n, n)), renorm, a
    closed = hasattr(coeffs.b, "partial_moment")
    dense = np.zeros((n, n))
    for j in range(n):
        if a[j] == 0.0:
            continue
        if closed:
            to_lo, to_hi, below = _bracket_weights_powerlaw(coeffs.b, x, j)
        else:
            to_lo, to_hi, below = _bracket_weights_quadrature(coeffs.b, x, j)
        col = np.zeros(j + 1)
        col[:j] += to_lo
        col[1 : j + 1] += to_hi
        col[0] += below
        s = float(np.sum(x[: j + 1] * col)) / x[j]
        if not 0.5 <= s <= 2.0:
            raise GridError(
                f"fragmentation column {j} needs renormalization by {1 / s:.3g}; the grid is too coarse for b"
            )
        renorm[j] = 1.0 / s
        dense[: j + 1, j] = a[j] * col / s * dx[j] / dx[: j + 1]
    dense[np.diag_indices(n)] -= a
    return sp.csr_matrix(dense), renorm, a


def _assemble_coag(coeffs: RateCoefficients, grid: SizeGrid) -> CoagTable:
    x = grid.centers
    n = grid.n
    empty_i = np.zeros(0, dtype=np.int64)
    empty_f = np.zeros(0)
    if getattr(coeffs.k, "is_zero", False):
        return CoagTable(empty_i, empty_i, empty_f, empty_i, empty_f, np.zeros((n, n)))
    X, Y = np.meshgrid(x, x, indexing="ij")
    kmat = np.asarray(coeffs.k(X, Y), dtype=float)
    if not np.all(np.isfinite(kmat)):
        raise EvaluationError("coagulation kernel returned nonfinite values on the grid")
    if np.any(kmat < 0):
        raise EvaluationError("coagulation kernel returned negative values on the grid")
    kmat = 0.5 * (kmat + kmat.T)
    pi, pj = np.triu_indices(n)
    kij = kmat[pi, pj]
    keep = kij > 0
    pi, pj, kij = pi[keep].astype(np.int64), pj[keep].astype(np.int64), kij[keep]
    v = x[pi] + x[pj]
    tgt = np.searchsorted(x, v, side="right") - 1
    whi = np.zeros(v.size)
    inside = tgt < n - 1
    t_in = tgt[inside]
    whi[inside] = (v[inside] - x[t_in]) / (x[t_in + 1] - x[t_in])
    # sums in [x_{n-1}, x_max] stay in the last cell with a mass-preserving
    # number weight v / x_{n-1}, encoded as whi = 1 - v / x_{n-1} <= 0
    last = (tgt == n - 1) & (v <= grid.x_max)
    whi[last] = 1.0 - v[last] / x[-1]
    tgt = np.where(inside | last, tgt, -1).astype(np.int64)
    kmat.setflags(write=False)
    return CoagTable(pi, pj, kij, tgt, whi, kmat)


def assemble(
    coeffs: RateCoefficients,
    grid: SizeGrid,
    diffusion: float = 1.0,
    right_bc: str = "dirichlet",
) -> DiscreteOperators:
    """Assemble all operators for one coefficient set and grid.

    Parameters
    ----------
    coeffs : RateCoefficients
    grid : SizeGrid
    diffusion : float
        Size-diffusion coefficient; 1 in the normalized model, 0 for the
        diffusion-free oracles.
    right_bc : {"dirichlet", "noflux"}
    """
    if diffusion < 0:
        raise ValueError("diffusion coefficient must be nonnegative")
    lower, diag, upper = _diffusion_diagonals(grid, right_bc)
    L_diff = sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], format="csr")
    L_frag, renorm, a = _assemble_frag(coeffs, grid)
    coag = _assemble_coag(coeffs, grid)
    for arr in (lower, diag, upper, renorm, a):
        arr.setflags(write=False)
    return DiscreteOperators(
        grid=grid,
        coeffs=coeffs,
        diffusion=float(diffusion),
        right_bc=right_bc,
        diff_lower=lower,
        diff_diag=diag,
        diff_upper=upper,
        L_diff=L_diff,
        L_frag=L_frag,
        frag_renorm=renorm,
        leak_weights=_leak_weights(grid, right_bc, diffusion),
        coag=coag,
        a_values=a,
    )


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------


def _phi(arg) -> np.ndarray:
    return arg.phi if isinstance(arg, DensityState) else np.asarray(arg, dtype=float)


def apply_diff(ops: DiscreteOperators, state) -> np.ndarray:
    """Unscaled second difference ``L_diff phi``."""
    return ops.L_diff @ _phi(state)


def apply_frag(ops: DiscreteOperators, state) -> np.ndarray:
    """Fragmentation rate ``-a phi + gain``."""
    return ops.L_frag @ _phi(state)


@dataclass(frozen=True)
class CoagRates:
    rate: np.ndarray
    nu: np.ndarray
    overflow: float
    gross: float


def coag_rates(ops: DiscreteOperators, phi, psi=None) -> CoagRates:
    """Coagulation rate ``K(phi, psi)`` with loss frequency and overflow."""
    phi = _phi(phi)
    psi = phi if psi is None else _phi(psi)
    c = ops.coag
    if c.empty:
        n = ops.grid.n
        return CoagRates(np.zeros(n), np.zeros(n), 0.0, 0.0)
    g = ops.grid
    rate, nu, overflow, gross = kernels.coag_rates(
        np.ascontiguousarray(phi), np.ascontiguousarray(psi), g.widths, g.centers,
        c.pi, c.pj, c.kij, c.tgt, c.whi,
    )
    return CoagRates(rate, nu, float(overflow), float(gross))


def apply_coag(ops: DiscreteOperators, phi, psi=None) -> np.ndarray:
    """Bilinear coagulation operator; ``psi`` defaults to ``phi``."""
    return coag_rates(ops, phi, psi).rate


# ---------------------------------------------------------------------------
# bilinear bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BilinearReport:
    ratio_k1: float
    ratio_k1b: float | None
    lhs: float

    def passed(self, tol: float = 1e-6) -> bool:
        ok = self.ratio_k1 <= 1.0 + tol
        return ok and (self.ratio_k1b is None or self.ratio_k1b <= 1.0 + tol)


def check_bilinear_bound(ops: DiscreteOperators, phi, psi) -> BilinearReport:
    """Ratios of ``||K(psi, phi)||_E0`` to its two Lipschitz-type bounds.

    The first bound uses ``k*`` (or ``2 K*``); the second, reported only when
    ``K*`` is known, mixes the ``Y`` and ``E0`` norms.
    """
    coeffs = ops.coeffs
    g = ops.grid
    phi = _phi(phi)
    psi = _phi(psi)
    kstar = coeffs.kstar_effective
    if kstar is None:
        raise ValueError("the bilinear bound needs k* or K*")
    out = apply_coag(ops, psi, phi)
    e0w = g.centers + g.centers**coeffs.m
    ell = eval_ell(g.centers, coeffs)
    lhs = float(np.sum(e0w * np.abs(out) * g.widths))
    y_phi = float(np.sum(ell * np.abs(phi) * g.widths))
    y_psi = float(np.sum(ell * np.abs(psi) * g.widths))
    e_phi = float(np.sum(e0w * np.abs(phi) * g.widths))
    e_psi = float(np.sum(e0w * np.abs(psi) * g.widths))

    def ratio(num, den):
        if den > 0:
            return num / den
        return 0.0 if num == 0 else float("inf")

    r1 = ratio(lhs, 1.5 * kstar * y_psi * y_phi)
    r2 = None
    if coeffs.Kstar is not None:
        r2 = ratio(lhs, 1.5 * coeffs.Kstar * (y_psi * e_phi + e_psi * y_phi))
    return BilinearReport(r1, r2, lhs)


# ---------------------------------------------------------------------------
# implicit solves
# ---------------------------------------------------------------------------


class ShiftedSolver:
    """Solves ``(s I - c A + diag(v)) u = rhs`` for fixed scalars ``s``, ``c``.

    The structure of ``A`` picks the method: a tridiagonal sweep when there
    is no fragmentation, a triangular solve when there is no diffusion, and a
    dense LU factorization otherwise.
    """

    def __init__(self, ops: DiscreteOperators, shift: float, scale: float, potential=None):
        self.ops = ops
        n = ops.grid.n
        v = np.zeros(n) if potential is None else np.asarray(potential, dtype=float)
        D = ops.diffusion
        if not ops.has_frag:
            self.kind = "tridiagonal"
            self._lower = -scale * D * np.asarray(ops.diff_lower)
            self._upper = -scale * D * np.asarray(ops.diff_upper)
            self._diag = shift - scale * D * np.asarray(ops.diff_diag) + v
            if not np.all(np.isfinite(self._diag)) or np.any(self._diag == 0):
                raise np.linalg.LinAlgError("singular tridiagonal system")
            return
        mat = shift * np.eye(n) - scale * ops.A.toarray() + np.diag(v)
        if D == 0.0:
            self.kind = "triangular"
            if np.any(np.diag(mat) == 0):
                raise np.linalg.LinAlgError("singular triangular system")
            self._mat = mat
        else:
            self.kind = "lu"
            self._lu = scipy.linalg.lu_factor(mat, check_finite=True)
            self._mat = mat

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.kind == "tridiagonal":
            return kernels.thomas_solve(self._lower, self._diag, self._upper, np.ascontiguousarray(rhs))
        if self.kind == "triangular":
            return scipy.linalg.solve_triangular(self._mat, rhs, lower=False, check_finite=False)
        u = scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        # one step of iterative refinement keeps the mass ledger at round-off level
        res = rhs - self._mat @ u
        return u + scipy.linalg.lu_solve(self._lu, res, check_finite=False)


class SolverCache:
    """Small LRU cache of :class:`ShiftedSolver` objects keyed by time step."""

    def __init__(self, ops: DiscreteOperators, maxsize: int = 8):
        self.ops = ops
        self.maxsize = maxsize
        self._store: OrderedDict[float, ShiftedSolver] = OrderedDict()

    def backward_euler(self, dt: float) -> ShiftedSolver:
        key = float(dt)
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        solver = ShiftedSolver(self.ops, 1.0, key)
        self._store[key] = solver
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return solver


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_coo(ops: DiscreteOperators, directory: str | Path) -> list[Path]:
    """Write ``L_diff`` and ``L_frag`` in Matrix Market coordinate format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, mat in (("L_diff", ops.L_diff), ("L_frag", ops.L_frag)):
        path = directory / f"{name}.mtx"
        scipy.io.mmwrite(str(path), sp.coo_matrix(mat), comment=f"{name} on {ops.grid.n} cells", precision=17)
        paths.append(path)
    return paths

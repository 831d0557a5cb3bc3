"""Hot loops: pairwise coagulation rates and the tridiagonal solve.

Each kernel exists twice. The ``*_loop`` version is written as plain loops and
is compiled by numba when available; the ``*_vec`` version uses numpy
vectorization only. ``coag_rates`` and ``thomas_solve`` point at the loop
version when numba is active and at the vectorized one otherwise, so the
pure-numpy fallback never pays for interpreted loops.
"""
from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit


@njit
def coag_rates_loop(phi, psi, dx, x, pi, pj, kij, tgt, whi):
    """Fixed-pivot coagulation rates over an upper-triangular pair table.

    Parameters
    ----------
    phi, psi : ndarray
        Densities entering the bilinear form K(phi, psi).
    dx, x : ndarray
        Cell widths and pivots.
    pi, pj : ndarray of int64
        Pair indices with ``pi <= pj``.
    kij : ndarray
        Kernel values at the pair pivots.
    tgt : ndarray of int64
        Lower bracketing pivot of ``x[pi] + x[pj]``, or -1 for overflow.
    whi : ndarray
        Share of the newborn number sent to ``tgt + 1``.

    Returns
    -------
    rate : ndarray
        Density rate of change, gain minus loss.
    nu : ndarray
        Loss frequency ``sum_l k(x_i, x_l) psi_l dx_l``.
    overflow : float
        Mass rate created beyond the last pivot.
    gross : float
        Sum of the absolute mass fluxes, used to scale conservation checks.
    """
    n = phi.size
    gain = np.zeros(n)
    nu = np.zeros(n)
    overflow = 0.0
    for p in range(pi.size):
        i = pi[p]
        j = pj[p]
        k = kij[p]
        if i == j:
            c = 0.5 * k * phi[i] * psi[i] * dx[i] * dx[i]
            nu[i] += k * psi[i] * dx[i]
        else:
            c = 0.5 * k * (phi[i] * psi[j] + phi[j] * psi[i]) * dx[i] * dx[j]
            nu[i] += k * psi[j] * dx[j]
            nu[j] += k * psi[i] * dx[i]
        t = tgt[p]
        if t < 0:
            overflow += c * (x[i] + x[j])
        else:
            w = whi[p]
            gain[t] += c * (1.0 - w)
            if w > 0.0:
                gain[t + 1] += c * w
    rate = np.empty(n)
    gross = overflow
    for i in range(n):
        g = gain[i] / dx[i]
        loss = phi[i] * nu[i]
        rate[i] = g - loss
        gross += x[i] * dx[i] * (abs(g) + abs(loss))
    return rate, nu, overflow, gross


def coag_rates_vec(phi, psi, dx, x, pi, pj, kij, tgt, whi):
    """Vectorized twin of :func:`coag_rates_loop` (same signature and outputs)."""
    n = phi.size
    diag = pi == pj
    half = np.where(diag, 0.5, 1.0)
    c = 0.5 * kij * (phi[pi] * psi[pj] + phi[pj] * psi[pi]) * dx[pi] * dx[pj] * half
    nu = np.bincount(pi, weights=kij * psi[pj] * dx[pj], minlength=n)
    nu += np.bincount(pj[~diag], weights=(kij * psi[pi] * dx[pi])[~diag], minlength=n)
    out = tgt < 0
    overflow = float(np.sum(c[out] * (x[pi[out]] + x[pj[out]])))
    t = tgt[~out]
    cin = c[~out]
    w = whi[~out]
    gain = np.bincount(t, weights=cin * (1.0 - w), minlength=n)
    up = w > 0.0
    gain += np.bincount(t[up] + 1, weights=cin[up] * w[up], minlength=n)
    g = gain / dx
    loss = phi * nu
    gross = overflow + float(np.sum(x * dx * (np.abs(g) + np.abs(loss))))
    return g - loss, nu, overflow, gross


@njit
def thomas_loop(lower, diag, upper, rhs):
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower[i]`` multiplies ``u[i-1]`` in row ``i`` (``lower[0]`` unused) and
    ``upper[i]`` multiplies ``u[i+1]`` (``upper[-1]`` unused).
    """
    n = diag.size
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / den
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
    u = np.empty(n)
    u[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        u[i] = dp[i] - cp[i] * u[i + 1]
    return u


def thomas_vec(lower, diag, upper, rhs):
    """Banded LAPACK solve with the same calling convention as :func:`thomas_loop`."""
    from scipy.linalg import solve_banded

    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


if HAVE_NUMBA:
    coag_rates = coag_rates_loop
    thomas_solve = thomas_loop
else:
    coag_rates = coag_rates_vec
    thomas_solve = thomas_vec

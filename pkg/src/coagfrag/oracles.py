"""Closed-form reference solutions for degenerate sub-models.

Three sub-models have exact answers: pure diffusion on the half line with a
Dirichlet condition at 0 (method of images), linear fragmentation with
``a(x) = x`` and ``b(x, y) = 2/y`` from ``f = exp(-x)``, and constant-kernel
coagulation, for which the total number obeys a closed moment ODE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .coefficients import (
    ConstantKernel,
    PowerLawDaughter,
    PowerLawRate,
    RateCoefficients,
    make_coefficients,
)
from .errors import QuadratureError


def _gauss(t: float, z):
    return np.exp(-np.square(z) / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)


def heat_dirichlet(f: Callable, t: float, x, rtol: float = 1e-10) -> np.ndarray:
    """Solution of ``u_t = u_xx`` on ``x > 0`` with ``u(t, 0) = 0`` and ``u(0) = f``.

    Evaluates ``int_0^inf [G(t, x-y) - G(t, x+y)] f(y) dy`` by adaptive
    quadrature at each point of ``x``.

    Raises
    ------
    QuadratureError
        If the quadrature does not reach ``rtol``.
    """
    if not t > 0:
        raise ValueError("the heat oracle needs t > 0")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    width = 12.0 * math.sqrt(t)
    for i, xi in enumerate(xs):
        def integrand(y, xi=xi):
            return (_gauss(t, xi - y) - _gauss(t, xi + y)) * float(f(y))

        lo = max(0.0, xi - width)
        pieces = [(0.0, lo), (lo, xi + width), (xi + width, np.inf)] if lo > 0 else [(0.0, xi + width), (xi + width, np.inf)]
        total = 0.0
        for a, b in pieces:
            val, err, *rest = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=400, full_output=1)
            if len(rest) >= 2 and err > max(1e-8 * abs(val), 1e-14):
                raise QuadratureError(f"heat oracle quadrature failed at x={xi:g}: {rest[1]}")
            total += val
        out[i] = total
    return out if np.ndim(x) else out[0]


def odd_gaussian_initial(x, s: float = 1.0):
    """``x exp(-x^2 / (2 s^2))``; its Dirichlet heat evolution is closed form."""
    x = np.asarray(x, dtype=float)
    return x * np.exp(-x * x / (2.0 * s * s))


def heat_odd_gaussian(t: float, x, s: float = 1.0):
    """Exact Dirichlet heat solution from :func:`odd_gaussian_initial`."""
    x = np.asarray(x, dtype=float)
    v = s * s + 2.0 * t
    return x * (s * s / v) ** 1.5 * np.exp(-x * x / (2.0 * v))


def pure_frag_linear(t: float, x):
    """``(1+t)^2 exp(-x (1+t))``, the exact solution for ``a = x``, ``b = 2/y``, ``f = exp(-x)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, dtype=float)
    return (1.0 + t) ** 2 * np.exp(-x * (1.0 + t))


def pure_coag_constant_moments(t, kappa: float = 1.0, M0_init: float = 1.0):
    """``M0(t) = M0_init / (1 + kappa M0_init t / 2)`` for the constant kernel."""
    if not (kappa > 0 and M0_init > 0):
        raise ValueError("need kappa > 0 and M0_init > 0")
    return M0_init / (1.0 + 0.5 * kappa * M0_init * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# cases
# ---------------------------------------------------------------------------


def _zero_rate():
    return PowerLawRate(0.0, 0.0)


def _zero_kernel():
    return ConstantKernel(0.0)


@dataclass
class OracleCase:
    """A sub-model with a known answer.

    ``exact(t, x)`` is the density when known; ``moment_law(t)`` maps time to
    the exact value of the tracked moment ``moment_order``.
    """

    name: str
    mechanisms: tuple[str, ...]
    coeffs: RateCoefficients
    diffusion: float
    initial: Callable
    horizon: float
    exact: Callable | None = None
    moment_law: Callable | None = None
    moment_order: float = 0.0
    substitution: dict = field(default_factory=dict)

    def __post_init__(self):
        self.substitution = substitution_residual(self)
        if self.substitution["residual"] > 1e-6:
            raise AssertionError(f"oracle {self.name} fails its own equation: {self.substitution}")


def _frag_rhs_exact(t: float, x: float) -> float:
    # -a(x) phi + int_x^inf a(y) b(x, y) phi(y) dy with a = y, b = 2/y
    tail, _ = integrate.quad(lambda y: 2.0 * float(pure_frag_linear(t, y)), x, np.inf, epsrel=1e-12)
    return -x * float(pure_frag_linear(t, x)) + tail


def substitution_residual(case: OracleCase, h: float = 1e-4) -> dict:
    """Plug the stated solution into its equation at sample points.

    Time derivatives use a centred difference of step ``h``; the largest
    relative residual over the samples is returned.
    """
    ts = np.linspace(0.1, case.horizon, 4)
    worst = 0.0
    if case.name == "heat":
        xs = np.array([0.3, 1.0, 2.0, 3.5])
        for t in ts:
            ut = (case.exact(t + h, xs) - case.exact(t - h, xs)) / (2 * h)
            uxx = (case.exact(t, xs + h) - 2 * case.exact(t, xs) + case.exact(t, xs - h)) / (h * h)
            scale = np.max(np.abs(ut)) + np.max(np.abs(uxx))
            worst = max(worst, float(np.max(np.abs(ut - uxx)) / scale))
        worst = max(worst, float(abs(case.exact(ts[-1], 0.0))))
    elif case.name == "fragmentation":
        xs = np.array([0.1, 0.5, 1.0, 3.0])
        for t in ts:
            for x in xs:
                ut = (case.exact(t + h, x) - case.exact(t - h, x)) / (2 * h)
                rhs = _frag_rhs_exact(t, x)
                worst = max(worst, abs(float(ut) - rhs) / (abs(rhs) + abs(float(ut))))
    elif case.name == "coagulation":
        kappa = case.coeffs.k.kappa
        for t in ts:
            m = case.moment_law(t)
            dm = (case.moment_law(t + h) - case.moment_law(t - h)) / (2 * h)
            worst = max(worst, abs(dm + 0.5 * kappa * m * m) / abs(dm))
    return {"residual": worst, "samples": int(ts.size)}


def heat_case(s: float = 1.0, horizon: float = 0.5) -> OracleCase:
    coeffs = make_coefficients(_zero_rate(), PowerLawDaughter(0.0), _zero_kernel(), 0.5, 0.75, 2.0)
    return OracleCase(
        "heat", ("diffusion",), coeffs, 1.0, lambda x: odd_gaussian_initial(x, s), horizon,
        exact=lambda t, x: heat_odd_gaussian(t, x, s),
    )


def fragmentation_case(horizon: float = 2.0) -> OracleCase:
    coeffs = make_coefficients(PowerLawRate(1.0, 1.0), PowerLawDaughter(0.0), _zero_kernel(), 0.5, 0.75, 2.0)
    return OracleCase(
        "fragmentation", ("fragmentation",), coeffs, 0.0, lambda x: np.exp(-np.asarray(x, dtype=float)), horizon,
        exact=pure_frag_linear, moment_law=lambda t: 1.0 + np.asarray(t, dtype=float), moment_order=0.0,
    )


def coagulation_case(kappa: float = 1.0, horizon: float = 1.0) -> OracleCase:
    coeffs = make_coefficients(_zero_rate(), PowerLawDaughter(0.0), ConstantKernel(kappa), 0.5, 0.75, 2.0)
    return OracleCase(
        "coagulation", ("coagulation",), coeffs, 0.0, lambda x: np.exp(-np.asarray(x, dtype=float)), horizon,
        moment_law=lambda t: pure_coag_constant_moments(t, kappa, 1.0), moment_order=0.0,
    )

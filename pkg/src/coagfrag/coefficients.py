"""Rate coefficients: fragmentation rate ``a``, daughter distribution ``b`` and
coagulation kernel ``k``, together with the derived weights used throughout
the package (``ell``, ``w_r``, ``delta_r`` and the absorption potential ``V``).

All maps are vectorized over numpy arrays. Coefficient objects are frozen
dataclasses and can be shared freely.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .errors import EvaluationError, HypothesisViolation, QuadratureError

logger = logging.getLogger(__name__)

QUAD_RTOL = 1e-10


# ---------------------------------------------------------------------------
# fragmentation rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawRate:
    """Overall fragmentation rate ``a(x) = A x**gamma``."""

    A: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.A < 0 or self.gamma < 0:
            raise ValueError("power-law rate needs A >= 0 and gamma >= 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.A == 0.0:
            return np.zeros_like(x)
        return self.A * x**self.gamma

    @property
    def is_zero(self) -> bool:
        return self.A == 0.0

    def sup_on(self, lo: float, hi: float) -> float:
        return float(self.A * hi**self.gamma) if self.gamma > 0 else float(self.A)

    def describe(self) -> dict:
        return {"family": "power_law", "A": self.A, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class TabulatedRate:
    """Rate interpolated linearly in ``log x`` from samples, clamped at the ends."""

    xs: np.ndarray
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0) or xs[0] <= 0:
            raise ValueError("tabulated rate needs at least two increasing positive sizes")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("tabulated rate values must be finite and nonnegative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", vals)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.interp(np.log(x), np.log(self.xs), self.values)

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.values == 0.0))

    def sup_on(self, lo: float, hi: float) -> float:
        pts = np.concatenate([np.geomspace(max(lo, 1e-300), hi, 1024), self.xs[(self.xs > lo) & (self.xs < hi)]])
        return float(np.max(self(pts)))

    def describe(self) -> dict:
        return {"family": "tabulated", "file": self.source, "samples": int(self.xs.size)}


# ---------------------------------------------------------------------------
# daughter distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawDaughter:
    """Daughter distribution ``b(x, y) = (nu+2) x**nu / y**(nu+1)`` on ``0 < x < y``."""

    nu: float = 0.0

    def __post_init__(self):
        if not self.nu > -1.0:
            raise ValueError("power-law daughter distribution needs nu > -1")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (self.nu + 2.0) * x**self.nu / y ** (self.nu + 1.0)
        return np.where((x > 0) & (x < y), val, 0.0)

    def partial_moment(self, p: float, lo, hi, y):
        """Closed form of ``int_lo^hi x**p b(x, y) dx`` for ``0 <= lo <= hi <= y``."""
        q = p + self.nu + 1.0
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        y = np.asarray(y, dtype=float)
        return (self.nu + 2.0) * (hi**q - lo**q) / (q * y ** (self.nu + 1.0))

    def delta_r(self, r: float) -> float:
        return 1.0 - (self.nu + 2.0) / (self.nu + r + 1.0)

    def describe(self) -> dict:
        return {"family": "power_law", "nu": self.nu}


@dataclass(frozen=True, eq=False)
class TabulatedDaughter:
    """Daughter distribution interpolated on a log-log grid; zero for ``x >= y``."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("tabulated daughter values must be finite and nonnegative")
        interp = RegularGridInterpolator(
            (np.log(self.xs), np.log(self.ys)), vals, bounds_error=False, fill_value=None
        )
        object.__setattr__(self, "_interp", interp)

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        ok = (x > 0) & (x < y)
        out = np.zeros(x.shape)
        if np.any(ok):
            pts = np.column_stack([np.log(x[ok]), np.log(y[ok])])
            out[ok] = np.maximum(self._interp(pts), 0.0)
        return out

    def describe(self) -> dict:
        return {"family": "tabulated", "file": self.source}


# ---------------------------------------------------------------------------
# coagulation kernels
# ---------------------------------------------------------------------------


def _unit_sup(rate) -> float:
    return rate.sup_on(0.0, 1.0)


def _c_m(m: float) -> float:
    # z**(m-1) <= c_m (x**(m-1) + y**(m-1)) for z = x + y
    return max(1.0, 2.0 ** (m - 2.0))


@dataclass(frozen=True)
class ConstantKernel:
    """``k(x, y) = kappa``."""

    kappa: float = 1.0

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.full(x.shape, float(self.kappa))

    @property
    def is_zero(self) -> bool:
        return self.kappa == 0.0

    def analytic_constants(self, rate, theta0, theta, m) -> dict:
        out = {"Kbig": self.kappa, "alpha": theta if 0.5 < theta <= 1 else 1.0}
        if theta0 == 0.5:
            out["kstar"] = self.kappa * 2.0 ** (m + 1.0)
        return out

    def describe(self) -> dict:
        return {"family": "constant", "kappa": self.kappa}


@dataclass(frozen=True)
class BoundedProductKernel:
    """``k(x, y) = kappa * x y / ((1 + x)(1 + y))``, bounded by ``kappa``."""

    kappa: float = 1.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.kappa * x * y / ((1.0 + x) * (1.0 + y))

    @property
    def is_zero(self) -> bool:
        return self.kappa == 0.0

    def analytic_constants(self, rate, theta0, theta, m) -> dict:
        out = {"Kbig": self.kappa, "alpha": theta if 0.5 < theta <= 1 else 1.0}
        if theta0 == 0.5:
            out["kstar"] = self.kappa * 2.0 ** (m + 1.0)
        return out

    def describe(self) -> dict:
        return {"family": "bounded_product", "kappa": self.kappa}


@dataclass(frozen=True)
class SmoluchowskiKernel:
    """Brownian kernel ``kappa (x**(1/3) + y**(1/3)) (x**(-1/3) + y**(-1/3))``."""

    kappa: float = 1.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.kappa * (np.cbrt(x) + np.cbrt(y)) * (1.0 / np.cbrt(x) + 1.0 / np.cbrt(y))

    @property
    def is_zero(self) -> bool:
        return self.kappa == 0.0

    def analytic_constants(self, rate, theta0, theta, m) -> dict:
        return {}

    def describe(self) -> dict:
        return {"family": "smoluchowski", "kappa": self.kappa}


@dataclass(frozen=True)
class MultiplicativeKernel:
    """``k(x, y) = kappa x y``; unbounded, used as a negative example."""

    kappa: float = 1.0

    def __call__(self, x, y):
        return self.kappa * np.asarray(x, dtype=float) * np.asarray(y, dtype=float)

    @property
    def is_zero(self) -> bool:
        return self.kappa == 0.0

    def analytic_constants(self, rate, theta0, theta, m) -> dict:
        return {}

    def describe(self) -> dict:
        return {"family": "multiplicative", "kappa": self.kappa}


@dataclass(frozen=True)
class RateCoupledKernel:
    """Kernels built from the fragmentation rate ``a``.

    ``kind="k2"``: ``K (1 + a(x))**alpha (1 + a(y))**alpha``.
    ``kind="k3"``: ``K x y / (x + y) [(1 + a(x))**alpha + (1 + a(y))**alpha]``.
    ``kind="k4"``: ``K [(1 + a(x))**alpha + (1 + a(y))**alpha]``.
    """

    kind: str
    K: float
    alpha: float
    rate: Any = field(default_factory=PowerLawRate)

    def __post_init__(self):
        if self.kind not in ("k2", "k3", "k4"):
            raise ValueError(f"unknown rate-coupled kernel kind {self.kind!r}")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ax = (1.0 + self.rate(x)) ** self.alpha
        ay = (1.0 + self.rate(y)) ** self.alpha
        if self.kind == "k2":
            return self.K * ax * ay
        if self.kind == "k3":
            return self.K * x * y / (x + y) * (ax + ay)
        return self.K * (ax + ay)

    @property
    def is_zero(self) -> bool:
        return self.K == 0.0

    def analytic_constants(self, rate, theta0, theta, m) -> dict:
        a1 = (1.0 + _unit_sup(self.rate)) ** self.alpha
        if self.kind == "k3":
            out = {"k0": self.K} if self.alpha <= theta else {}
            if theta0 <= 0.5 and self.alpha <= theta:
                out["Kstar"] = self.K * (1.0 + _c_m(m)) * a1
            return out
        if self.kind == "k2":
            out = {"Kbig": self.K, "alpha": self.alpha}
            if theta0 == 0.5 and theta == self.alpha:
                out["kstar"] = self.K * 2.0 ** (m + 1.0) * a1 * a1
            return out
        return {}

    def describe(self) -> dict:
        return {"family": self.kind, "K": self.K, "alpha": self.alpha}


@dataclass(frozen=True, eq=False)
class TabulatedKernel:
    """Kernel interpolated bilinearly in ``(log x, log y)`` from a table."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("tabulated kernel values must be finite and nonnegative")
        interp = RegularGridInterpolator(
            (np.log(self.xs), np.log(self.ys)), vals, bounds_error=False, fill_value=None
        )
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "_zero", bool(np.all(vals == 0.0)))

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        pts = np.column_stack([np.log(x).ravel(), np.log(y).ravel()])
        return np.maximum(self._interp(pts), 0.0).reshape(x.shape)

    @property
    def is_zero(self) -> bool:
        return self._zero

    def analytic_constants(self, rate, theta0, theta, m) -> dict:
        return {}

    def describe(self) -> dict:
        return {"family": "tabulated", "file": self.source}


# ---------------------------------------------------------------------------
# the coefficient triple
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateCoefficients:
    """The triple ``(a, b, k)`` with weight parameters and hypothesis constants.

    Constants left as ``None`` are unknown; the corresponding hypothesis is
    then skipped by :func:`validate_hypotheses`.
    """

    a: Any
    b: Any
    k: Any
    theta0: float = 0.5
    theta: float = 0.75
    m: float = 2.0
    kstar: float | None = None
    Kstar: float | None = None
    k0: float | None = None
    Kbig: float | None = None
    alpha: float | None = None
    delta2: float | None = None

    def __post_init__(self):
        for name in ("theta0", "theta", "m"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def kstar_effective(self) -> float | None:
        """``kstar`` if given, else ``2 Kstar`` when the stronger bound is known."""
        if self.kstar is not None:
            return self.kstar
        if self.Kstar is not None:
            return 2.0 * self.Kstar
        return None

    def describe(self) -> dict:
        return {
            "a": self.a.describe(),
            "b": self.b.describe(),
            "k": self.k.describe(),
            "theta0": self.theta0,
            "theta": self.theta,
            "m": self.m,
            "kstar": self.kstar,
            "Kstar": self.Kstar,
            "k0": self.k0,
            "Kbig": self.Kbig,
            "alpha": self.alpha,
            "delta2": self.delta2,
        }


def make_coefficients(a, b, k, theta0=0.5, theta=0.75, m=2.0, **constants) -> RateCoefficients:
    """Build coefficients, filling unknown constants from closed-form bounds.

    Explicit keyword constants take precedence over the analytic defaults of
    the kernel family. ``delta2`` defaults to the computed ``delta_r`` at
    ``r = 2``.
    """
    known = {key: val for key, val in constants.items() if val is not None}
    defaults = k.analytic_constants(a, theta0, theta, m) if hasattr(k, "analytic_constants") else {}
    for key, val in defaults.items():
        known.setdefault(key, val)
    if "delta2" not in known:
        known["delta2"] = compute_delta_r(b, 2.0)
    return RateCoefficients(a=a, b=b, k=k, theta0=theta0, theta=theta, m=m, **known)


def with_constants(coeffs: RateCoefficients, **constants) -> RateCoefficients:
    return replace(coeffs, **constants)


# ---------------------------------------------------------------------------
# derived weights
# ---------------------------------------------------------------------------


def _eval_a(coeffs: RateCoefficients, x: np.ndarray) -> np.ndarray:
    ax = np.asarray(coeffs.a(x), dtype=float)
    if not np.all(np.isfinite(ax)):
        raise EvaluationError("fragmentation rate returned a nonfinite value")
    return ax


def eval_ell(x, coeffs: RateCoefficients):
    """Kernel weight ``ell``: ``x**(1-2 theta0)`` below 1, ``(1+a)**theta x**m`` from 1 on."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("ell is defined for x > 0 only")
    ax = _eval_a(coeffs, x)
    small = x ** (1.0 - 2.0 * coeffs.theta0)
    large = (1.0 + ax) ** coeffs.theta * x**coeffs.m
    out = np.where(x < 1.0, small, large)
    return out if out.ndim else float(out)


def eval_wr(x, r: float):
    """Convex weight ``(r-1)/2 x**3`` on ``[0, 1]`` and ``x**r + (r-3)/2 x`` beyond."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("w_r needs finite sizes")
    out = np.where(x <= 1.0, 0.5 * (r - 1.0) * x**3, np.abs(x) ** r + 0.5 * (r - 3.0) * x)
    return out if out.ndim else float(out)


def eval_wr_prime(x, r: float):
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 1.0, 1.5 * (r - 1.0) * x**2, r * np.abs(x) ** (r - 1.0) + 0.5 * (r - 3.0))
    return out if out.ndim else float(out)


def eval_V(x, gamma: float, coeffs: RateCoefficients):
    """Absorption potential ``gamma ell(x) / (x + x**m)``."""
    if not gamma > 0:
        raise ValueError("the potential needs gamma > 0")
    x = np.asarray(x, dtype=float)
    return gamma * eval_ell(x, coeffs) / (x + x**coeffs.m)


# ---------------------------------------------------------------------------
# daughter-distribution integrals
# ---------------------------------------------------------------------------


def _scaled_moment(b, p: float, y: float) -> float:
    """``y**(-p) int_0^y x**p b(x, y) dx`` by adaptive quadrature on ``u = x/y``."""
    def integrand(u):
        return u**p * float(b(u * y, y)) * y

    val, err, *rest = integrate.quad(
        integrand, 0.0, 1.0, epsabs=1e-14, epsrel=QUAD_RTOL, limit=200, full_output=1
    )
    # quad appends a message only when it flags a problem
    if len(rest) >= 2 and err > 1e-8 * max(abs(val), 1e-300):
        raise QuadratureError(f"quadrature of the daughter moment failed at y={y:g}: {rest[1]}")
    return val


def compute_delta_r(b, r: float, y_samples=None) -> float:
    """Infimum over sampled parents of ``1 - y**(-r) int_0^y x**r b(x, y) dx``.

    Parameters
    ----------
    b : daughter distribution
    r : float
        Moment order, ``r > 1``.
    y_samples : array_like, optional
        Parent sizes; defaults to 256 log-spaced points on ``[1e-3, 1e3]``.

    Returns
    -------
    float
        Estimate in ``(0, 1)``. For closed-form families the analytic value
        is included in the infimum.
    """
    if not r > 1:
        raise ValueError("delta_r needs r > 1")
    ys = np.geomspace(1e-3, 1e3, 256) if y_samples is None else np.asarray(y_samples, dtype=float)
    vals = [1.0 - _scaled_moment(b, r, float(y)) for y in ys]
    if hasattr(b, "delta_r"):
        vals.append(b.delta_r(r))
    delta = float(min(vals))
    if not 0.0 < delta < 1.0:
        raise HypothesisViolation(f"delta_{r:g} estimate {delta:.6g} lies outside (0, 1)")
    return delta


def mass_moment_residual(b, y: float) -> float:
    """Relative error of ``int_0^y x b(x, y) dx = y``."""
    if hasattr(b, "partial_moment"):
        exact = float(b.partial_moment(1.0, 0.0, y, y))
        return abs(exact - y) / y
    return abs(_scaled_moment(b, 1.0, y) - 1.0)


# ---------------------------------------------------------------------------
# hypothesis validation
# ---------------------------------------------------------------------------


@dataclass
class HypothesisResult:
    """Outcome of one sampled hypothesis check.

    ``margin`` is the smallest relative slack over the samples (``1 - lhs/bound``
    for upper bounds), so a negative margin means the check failed.
    """

    name: str
    status: str
    margin: float = float("nan")
    worst: dict = field(default_factory=dict)
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "margin": None if not math.isfinite(self.margin) else self.margin,
            "worst": self.worst,
            "detail": self.detail,
        }


@dataclass
class ValidationReport:
    results: list[HypothesisResult]
    delta_table: dict[str, float]

    @property
    def all_passed(self) -> bool:
        return all(res.passed for res in self.results)

    def __getitem__(self, name: str) -> HypothesisResult:
        for res in self.results:
            if res.name == name:
                return res
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "hypotheses": [res.to_dict() for res in self.results],
            "delta_r": self.delta_table,
        }


def _bound_check(name, lhs, bound, xs, ys, tol=1e-12, detail="") -> HypothesisResult:
    lhs = np.asarray(lhs, dtype=float)
    bound = np.asarray(bound, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        slack = np.where(bound > 0, 1.0 - lhs / bound, np.where(lhs > 0, -np.inf, 1.0))
    idx = np.unravel_index(int(np.argmin(slack)), slack.shape)
    margin = float(slack[idx])
    worst = {"x": float(xs[idx]), "y": float(ys[idx]), "k": float(lhs[idx]), "bound": float(bound[idx])}
    return HypothesisResult(name, "pass" if margin >= -tol else "fail", margin, worst, detail)


def _growth_check(ratio, xs, X, Y, factor: float = 1.2) -> HypothesisResult:
    """K1 without a constant: fail if ``k (z + z^m) / (l(x) l(y))`` keeps growing at the sample edges.

    The supremum over all samples is compared with the supremum over the
    samples one decade inside the range; a jump by more than ``factor``,
    attained in the outer decade, indicates an unbounded ratio.
    """
    inner = (xs >= xs[0] * 10.0) & (xs <= xs[-1] / 10.0)
    with np.errstate(invalid="ignore"):
        r = np.where(np.isfinite(ratio), ratio, np.inf)
    idx = np.unravel_index(int(np.argmax(r)), r.shape)
    sup_all = float(r[idx])
    sup_inner = float(np.max(r[np.ix_(inner, inner)])) if inner.any() else sup_all
    worst = {"x": float(X[idx]), "y": float(Y[idx]), "ratio": sup_all, "inner_sup": sup_inner}
    if sup_all > factor * sup_inner:
        return HypothesisResult("K1", "fail", 1.0 - sup_all / max(sup_inner, 1e-300), worst,
                                "k* not given; the bound ratio grows without limit toward the sample edge")
    return HypothesisResult("K1", "skipped", float("nan"), worst,
                            f"k* not given; sampled sup of the bound ratio is {sup_all:.4g}")


def validate_hypotheses(coeffs: RateCoefficients, samples=None) -> ValidationReport:
    """Check every hypothesis whose constants are known on a sampled size set.

    Parameters
    ----------
    coeffs : RateCoefficients
    samples : array_like, optional
        Sizes used for both coordinates; defaults to 129 log-spaced points
        on ``[1e-4, 1e4]``.
    """
    xs = np.geomspace(1e-4, 1e4, 129) if samples is None else np.asarray(samples, dtype=float)
    results: list[HypothesisResult] = []
    t0, th, m = coeffs.theta0, coeffs.theta, coeffs.m

    ok = 0.0 <= t0 < th <= 1.0 and m > 1.0
    results.append(
        HypothesisResult(
            "parameters", "pass" if ok else "fail", 1.0 if ok else -1.0,
            {"theta0": t0, "theta": th, "m": m}, "0 <= theta0 < theta <= 1, m > 1",
        )
    )

    ax = np.asarray(coeffs.a(xs), dtype=float)
    a_ok = bool(np.all(np.isfinite(ax)) and np.all(ax >= 0))
    bad = int(np.argmin(np.where(np.isfinite(ax), ax, -np.inf)))
    results.append(
        HypothesisResult(
            "A.0", "pass" if a_ok else "fail", 1.0 if a_ok else -1.0,
            {} if a_ok else {"x": float(xs[bad]), "a": float(ax[bad])},
            "a finite and nonnegative on samples",
        )
    )

    ys = np.geomspace(1e-3, 1e3, 64)
    res_b0 = np.array([mass_moment_residual(coeffs.b, float(y)) for y in ys])
    worst_b0 = int(np.argmax(res_b0))
    results.append(
        HypothesisResult(
            "B.0", "pass" if res_b0[worst_b0] <= 1e-10 else "fail", 1e-10 - float(res_b0[worst_b0]),
            {"y": float(ys[worst_b0]), "residual": float(res_b0[worst_b0])},
            "relative error of the mass moment of b",
        )
    )

    d2 = coeffs.delta2 if coeffs.delta2 is not None else compute_delta_r(coeffs.b, 2.0)
    second = np.array([_scaled_moment(coeffs.b, 2.0, float(y)) for y in ys])
    slack = 1.0 - second / (1.0 - d2)
    worst_b10 = int(np.argmin(slack))
    results.append(
        HypothesisResult(
            "B.10", "pass" if slack[worst_b10] >= -1e-10 else "fail", float(slack[worst_b10]),
            {"y": float(ys[worst_b10]), "delta2": d2}, "second moment of b below (1 - delta2) y^2",
        )
    )

    X, Y = np.meshgrid(xs, xs, indexing="ij")
    kxy = np.asarray(coeffs.k(X, Y), dtype=float)
    if not np.all(np.isfinite(kxy)):
        results.append(HypothesisResult("symmetry", "fail", -np.inf, {}, "kernel not finite on samples"))
        return ValidationReport(results, {})
    asym = np.abs(kxy - kxy.T)
    scale = np.maximum(np.abs(kxy), 1e-300)
    rel = float(np.max(asym / scale))
    results.append(
        HypothesisResult(
            "symmetry", "pass" if rel <= 1e-12 and np.all(kxy >= 0) else "fail", -rel, {},
            "k(x,y) = k(y,x) >= 0",
        )
    )

    Z = X + Y
    zz = Z + Z**m
    ell = eval_ell(xs, coeffs)
    LX, LY = np.meshgrid(ell, ell, indexing="ij")
    kstar = coeffs.kstar_effective
    if kstar is not None:
        src = f"k* = {kstar:g}" if coeffs.kstar is not None else f"k* = 2 K* = {kstar:g}"
        results.append(_bound_check("K1", kxy, kstar * LX * LY / zz, X, Y, detail=src))
    else:
        results.append(_growth_check(kxy * zz / (LX * LY), xs, X, Y))
    if coeffs.Kstar is not None:
        e0 = xs + xs**m
        E0X, E0Y = np.meshgrid(e0, e0, indexing="ij")
        bound = coeffs.Kstar * (LX * E0Y + LY * E0X) / zz
        results.append(_bound_check("K1b", kxy, bound, X, Y, detail=f"K* = {coeffs.Kstar:g}"))
    else:
        results.append(HypothesisResult("K1b", "skipped", detail="K* not given"))
    if coeffs.Kbig is not None and coeffs.alpha is not None:
        a1 = (1.0 + ax) ** coeffs.alpha
        A1X, A1Y = np.meshgrid(a1, a1, indexing="ij")
        results.append(
            _bound_check("K2", kxy, coeffs.Kbig * A1X * A1Y, X, Y, detail=f"K = {coeffs.Kbig:g}, alpha = {coeffs.alpha:g}")
        )
    else:
        results.append(HypothesisResult("K2", "skipped", detail="K or alpha not given"))
    if coeffs.k0 is not None:
        big = xs > 1.0
        xb = xs[big]
        XB, YB = np.meshgrid(xb, xb, indexing="ij")
        at = (1.0 + ax[big]) ** th
        ATX, ATY = np.meshgrid(at, at, indexing="ij")
        bound = coeffs.k0 * XB * YB / (XB + YB) * (ATX + ATY)
        results.append(_bound_check("K3", kxy[np.ix_(big, big)], bound, XB, YB, detail=f"k0 = {coeffs.k0:g}"))
    else:
        results.append(HypothesisResult("K3", "skipped", detail="k0 not given"))

    table = {}
    for r in (1.5, 2.0, 2.5, 3.0):
        try:
            table[f"{r:g}"] = compute_delta_r(coeffs.b, r)
        except HypothesisViolation as exc:
            logger.warning("%s", exc)
            table[f"{r:g}"] = float("nan")
    return ValidationReport(results, table)


# ---------------------------------------------------------------------------
# tabulated input
# ---------------------------------------------------------------------------


def read_table(path: str | Path) -> tuple[np.ndarray, ...]:
    """Read a ``x[,y],value`` CSV into columns. A header row is optional."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] not in (2, 3):
        raise ValueError(f"{path}: expected 2 or 3 numeric columns")
    return tuple(data.T)


def _grid_from_long(x, y, v, path):
    xs = np.unique(x)
    ys = np.unique(y)
    if xs.size * ys.size != v.size:
        raise ValueError(f"{path}: (x, y) samples do not form a full grid")
    grid = np.full((xs.size, ys.size), np.nan)
    grid[np.searchsorted(xs, x), np.searchsorted(ys, y)] = v
    return xs, ys, grid


def load_tabulated_rate(path: str | Path) -> TabulatedRate:
    cols = read_table(path)
    if len(cols) != 2:
        raise ValueError(f"{path}: a rate table has columns x,value")
    return TabulatedRate(cols[0], cols[1], source=str(path))


def load_tabulated_kernel(path: str | Path) -> TabulatedKernel:
    cols = read_table(path)
    if len(cols) != 3:
        raise ValueError(f"{path}: a kernel table has columns x,y,value")
    xs, ys, grid = _grid_from_long(*cols, path)
    return TabulatedKernel(xs, ys, grid, source=str(path))


def load_tabulated_daughter(path: str | Path) -> TabulatedDaughter:
    cols = read_table(path)
    if len(cols) != 3:
        raise ValueError(f"{path}: a daughter table has columns x,y,value")
    xs, ys, grid = _grid_from_long(*cols, path)
    return TabulatedDaughter(xs, ys, grid, source=str(path))

"""Moment inequalities with explicit constants, and a-priori bounds in time.

The checkers evaluate both sides of each inequality on discrete states.
Integrals over ``(1, inf)`` use the grid cell containing 1 split
proportionally (``SizeGrid.fraction_above``). The constants are assembled
step by step from the estimates; :meth:`MomentBoundConstants.to_dict`
returns the full derivation so that a report can be audited.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .coefficients import RateCoefficients, compute_delta_r, eval_wr
from .grid import DensityState, moment
from .operators import DiscreteOperators, apply_coag, apply_diff, apply_frag

DEFAULT_RTOL = 1e-8


def _phi(psi) -> np.ndarray:
    return psi.phi if isinstance(psi, DensityState) else np.asarray(psi, dtype=float)


def _margin_ok(lhs: float, rhs: float, rtol: float) -> tuple[float, bool]:
    """Slack ``rhs - lhs`` and whether it clears the relative tolerance."""
    scale = max(abs(lhs), abs(rhs), 1e-300)
    margin = rhs - lhs
    return margin, margin >= -rtol * scale


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentBoundConstants:
    """Explicit constants of the moment estimates at order ``r``.

    Attributes
    ----------
    c1, c2, c3 : float
        Coefficients of the large-large, small-small and mixed coagulation
        terms.
    kappa1 : float
        ``max(c1, c2, c3)``.
    R_r : float
        Splitting size with ``R_r**(r-1) = max(1, 2 r / delta_r)``.
    a_sup : float
        Sampled supremum of ``a`` on ``[1, R_r]``.
    young_constant : float
        ``(2/delta_r)**(theta/(1-theta))``.
    B : float
        ``kappa1 + young_constant * kappa1**(1/(1-theta))``.
    c_r : float
        ``max(0, (3-r)/2)``, from ``x**r = w_r + (3-r)/2 x`` on ``(1, inf)``.
    kappa3 : float
        ``max(a_sup + 3 r D + kappa1 + B c_r, D r**2, B)``.
    """

    r: float
    theta: float
    diffusion: float
    delta_r: float
    kappa2: float
    c1: float
    c2: float
    c3: float
    kappa1: float
    R_r: float
    a_sup: float
    young_exponents: tuple[float, float]
    young_constant: float
    B: float
    c_r: float
    kappa3: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["young_exponents"] = list(self.young_exponents)
        out["derivation"] = {
            "kappa2": "r (r+3) 2^((r-3)+)",
            "c1": "2^(r+1) k0 if r <= 2 else 4^r k0",
            "c2": "kappa2 k*",
            "c3": "2^(r+2) k*",
            "kappa1": "max(c1, c2, c3)",
            "R_r": "max(1, 2r/delta_r)^(1/(r-1))",
            "a_sup": "max of a on 1024 log-spaced points of [1, R_r]",
            "young_constant": "(2/delta_r)^(theta/(1-theta))",
            "B": "kappa1 + young_constant kappa1^(1/(1-theta))",
            "c_r": "max(0, (3-r)/2)",
            "kappa3": "max(a_sup + 3rD + kappa1 + B c_r, D r^2, B)",
        }
        return out


def kappa2(r: float) -> float:
    return r * (r + 3.0) * 2.0 ** max(r - 3.0, 0.0)


def bound_constants(coeffs: RateCoefficients, r: float, diffusion: float = 1.0,
                    delta_r: float | None = None) -> MomentBoundConstants:
    """Assemble the explicit constants at order ``r``.

    Raises
    ------
    ValueError
        If ``r`` is outside ``(1, m]``, ``theta`` is not below 1, or the
        kernel constants ``k0`` and ``k*`` are unknown.
    """
    if not 1.0 < r <= coeffs.m + 1e-12:
        raise ValueError(f"order r={r:g} must lie in (1, m={coeffs.m:g}]")
    th = coeffs.theta
    if not th < 1.0:
        raise ValueError("the assembled bound needs theta < 1")
    kstar = coeffs.kstar_effective
    if coeffs.k0 is None or kstar is None:
        raise ValueError("the moment bounds need k0 and k* (or K*)")
    d = compute_delta_r(coeffs.b, r) if delta_r is None else delta_r
    k2 = kappa2(r)
    c1 = (2.0 ** (r + 1.0) if r <= 2.0 else 4.0**r) * coeffs.k0
    c2 = k2 * kstar
    c3 = 2.0 ** (r + 2.0) * kstar
    k1 = max(c1, c2, c3)
    R = max(1.0, 2.0 * r / d) ** (1.0 / (r - 1.0))
    pts = np.geomspace(1.0, R, 1024) if R > 1.0 else np.array([1.0])
    a_sup = float(np.max(coeffs.a(pts)))
    p = 1.0 / (1.0 - th)
    yc = (2.0 / d) ** (th / (1.0 - th))
    B = k1 + yc * k1**p
    c_r = max(0.0, 0.5 * (3.0 - r))
    D = diffusion
    k3 = max(a_sup + 3.0 * r * D + k1 + B * c_r, D * r * r, B)
    return MomentBoundConstants(
        r=r, theta=th, diffusion=D, delta_r=d, kappa2=k2, c1=c1, c2=c2, c3=c3, kappa1=k1,
        R_r=R, a_sup=a_sup, young_exponents=(p, th * p), young_constant=yc, B=B, c_r=c_r, kappa3=k3,
    )


@lru_cache(maxsize=64)
def _cached_constants(coeffs: RateCoefficients, r: float, diffusion: float) -> MomentBoundConstants:
    return bound_constants(coeffs, r, diffusion)


def delta_range_claims(b, delta2: float, orders=(1.5, 2.0, 2.5, 3.0), tol: float = 1e-10) -> list[dict]:
    """Check ``delta_r >= delta_2`` for ``r >= 2`` and ``delta_r >= 1 - (1-delta_2)**(r-1)`` below 2."""
    rows = []
    for r in orders:
        d = compute_delta_r(b, r)
        floor = delta2 if r >= 2 else 1.0 - (1.0 - delta2) ** (r - 1.0)
        rows.append({"r": r, "delta_r": d, "floor": floor, "passed": bool(d >= floor - tol)})
    return rows


# ---------------------------------------------------------------------------
# discrete helpers
# ---------------------------------------------------------------------------


def _split(ops: DiscreteOperators, phi: np.ndarray):
    g = ops.grid
    above = g.fraction_above(1.0)
    mass = phi * g.widths
    return mass * (1.0 - above), mass * above


@lru_cache(maxsize=16)
def _coag_weight(ops: DiscreteOperators, r: float) -> np.ndarray:
    """``H_ij = (w(x_i+x_j) - w(x_i) - w(x_j)) k_ij / 2`` at the pivots."""
    x = ops.grid.centers
    w = eval_wr(x, r)
    X, Y = np.meshgrid(x, x, indexing="ij")
    H = 0.5 * (eval_wr(X + Y, r) - w[:, None] - w[None, :]) * ops.coag.kmat
    H.setflags(write=False)
    return H


@dataclass
class LemmaCheck:
    name: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, "passed": self.passed}
        out.update(self.detail)
        return out


# ---------------------------------------------------------------------------
# the four checkers
# ---------------------------------------------------------------------------


def lge1_check(ops: DiscreteOperators, psi, r: float, delta_r: float | None = None,
               rtol: float = DEFAULT_RTOL) -> LemmaCheck:
    """Fragmentation contribution: ``int w_r F(psi) <= -delta_r int_1 x^r a psi + int_1 x a psi``."""
    phi = _phi(psi)
    g = ops.grid
    x = g.centers
    d = compute_delta_r(ops.coeffs.b, r) if delta_r is None else delta_r
    w = eval_wr(x, r)
    lhs = float(np.sum(w * g.widths * apply_frag(ops, phi)))
    a = ops.a_values
    _, hi = _split(ops, phi)
    per_rhs = (-d * x**r * a + x * a) * hi
    rhs = float(np.sum(per_rhs))
    margin, ok = _margin_ok(lhs, rhs, rtol)
    detail = {"delta_r": d}
    if not ok:
        per_lhs = (w * g.widths) @ ops.L_frag.toarray() * phi
        j = int(np.argmin(per_rhs - per_lhs))
        detail["worst_parent"] = {"cell": j, "x": float(x[j]), "lhs": float(per_lhs[j]), "rhs": float(per_rhs[j])}
    return LemmaCheck("LGE1", lhs, rhs, margin, ok, detail)


def lge2_check(ops: DiscreteOperators, psi, r: float, rtol: float = DEFAULT_RTOL) -> LemmaCheck:
    """Diffusion contribution and the integration-by-parts identity behind it.

    ``lhs = -sum w_i (L psi)_i dx_i``. The inequality compares it with
    ``-3 r M1 - r**2 int_1 x**(r-2) psi``. The identity value is the summed
    product of ``psi`` with the discrete second difference of ``w_r`` built
    with ``w_r(0) = w_r'(0) = 0`` at the left end, plus the right-edge term.
    Their difference equals the ghost flux ``w_r(x_0) psi_0 / x_0``, which is
    negligible exactly when ``psi`` vanishes at 0.
    """
    phi = _phi(psi)
    g = ops.grid
    x, dx = g.centers, g.widths
    w = eval_wr(x, r)
    lhs = -float(np.sum(w * dx * apply_diff(ops, phi)))
    lo, hi = _split(ops, phi)
    m1 = float(np.sum(x * phi * dx))
    tail = float(np.sum(x ** (r - 2.0) * hi))
    rhs = -3.0 * r * m1 - r * r * tail
    # lhs >= rhs is the claim, so the slack is lhs - rhs
    margin, ok = _margin_ok(-lhs, -rhs, rtol)

    # discrete second difference of w with w'(0) = 0 as left flux
    face = np.empty(g.n + 1)
    face[0] = 0.0
    face[1:-1] = np.diff(w) / np.diff(x)
    h_r = g.x_max - x[-1]
    w_end = float(eval_wr(g.x_max, r))
    if ops.right_bc == "dirichlet":
        face[-1] = (w_end - w[-1]) / h_r
        edge = phi[-1] * w_end / h_r
    else:
        face[-1] = 0.0
        edge = 0.0
    identity = -float(np.sum(phi * np.diff(face))) + edge
    residual = lhs - identity
    scale = max(abs(lhs), abs(identity), 1e-300)
    cont = -3.0 * (r - 1.0) * float(np.sum(x * lo)) - r * (r - 1.0) * tail
    detail = {
        "identity_value": identity,
        "identity_residual": residual,
        "identity_passed": bool(abs(residual) <= rtol * scale),
        "continuum_identity_value": cont,
        "right_edge_term": edge,
    }
    return LemmaCheck("LGE2", lhs, rhs, margin, ok and detail["identity_passed"], detail)


def lge3_check(ops: DiscreteOperators, psi, r: float, consts: MomentBoundConstants | None = None,
               rtol: float = DEFAULT_RTOL) -> LemmaCheck:
    """Coagulation contribution split into large-large, small-small and mixed pairs."""
    phi = _phi(psi)
    coeffs = ops.coeffs
    consts = bound_constants(coeffs, r, ops.diffusion) if consts is None else consts
    g = ops.grid
    x = g.centers
    H = _coag_weight(ops, float(r))
    lo, hi = _split(ops, phi)
    I1 = float(hi @ H @ hi)
    I2 = float(lo @ H @ lo)
    I3 = float(2.0 * (lo @ H @ hi))
    m1 = float(np.sum(x * phi * g.widths))
    weight_big = float(np.sum(x**r * (1.0 + ops.a_values) ** coeffs.theta * hi))
    m_first = m1 if r <= 2.0 else float(np.sum(x ** (r - 1.0) * phi * g.widths))
    b1 = consts.c1 * m_first * weight_big
    b2 = consts.c2 * m1 * m1
    b3 = consts.c3 * m1 * weight_big
    terms = {}
    all_ok = True
    blocks = {"I1": (hi, hi, 1.0), "I2": (lo, lo, 1.0), "I3": (lo, hi, 2.0)}
    for name, val, bound in (("I1", I1, b1), ("I2", I2, b2), ("I3", I3, b3)):
        margin, ok = _margin_ok(val, bound, rtol)
        terms[name] = {"value": val, "bound": bound, "margin": margin, "passed": ok}
        if not ok:
            u, v, fac = blocks[name]
            contrib = fac * u[:, None] * H * v[None, :]
            i, j = np.unravel_index(int(np.argmax(contrib)), contrib.shape)
            terms[name]["worst_pair"] = {"i": int(i), "j": int(j), "x_i": float(x[i]), "x_j": float(x[j])}
        all_ok &= ok
    lhs = I1 + I2 + I3
    total = float(np.sum(eval_wr(x, r) * g.widths * apply_coag(ops, phi)))
    rhs = b1 + b2 + b3
    margin, _ = _margin_ok(lhs, rhs, rtol)
    detail = {"terms": terms, "scheme_value": total}
    return LemmaCheck("LGE3", lhs, rhs, margin, all_ok, detail)


def lge4_rhs(ops: DiscreteOperators, psi, r: float, consts: MomentBoundConstants | None = None) -> float:
    """``kappa3 (1 + M1 + M_{1+(r-2)+})**(1/(1-theta)) (1 + M1 + int_1 w_r psi)``."""
    phi = _phi(psi)
    consts = bound_constants(ops.coeffs, r, ops.diffusion) if consts is None else consts
    g = ops.grid
    x = g.centers
    m1 = float(np.sum(x * phi * g.widths))
    mq = float(np.sum(x ** (1.0 + max(r - 2.0, 0.0)) * phi * g.widths))
    _, hi = _split(ops, phi)
    tail_w = float(np.sum(eval_wr(x, r) * hi))
    q = (1.0 + m1 + mq) ** consts.young_exponents[0]
    return consts.kappa3 * q * (1.0 + m1 + tail_w)


def lge4_check(ops: DiscreteOperators, psi, r: float, consts: MomentBoundConstants | None = None,
               rtol: float = DEFAULT_RTOL) -> LemmaCheck:
    """Assembled estimate ``int w_r (A psi + K psi) <= lge4_rhs``, decomposed on failure."""
    phi = _phi(psi)
    consts = bound_constants(ops.coeffs, r, ops.diffusion) if consts is None else consts
    g = ops.grid
    w = eval_wr(g.centers, r) * g.widths
    frag = float(w @ apply_frag(ops, phi))
    diff = ops.diffusion * float(w @ apply_diff(ops, phi))
    coag = float(w @ apply_coag(ops, phi))
    lhs = frag + diff + coag
    rhs = lge4_rhs(ops, phi, r, consts)
    margin, ok = _margin_ok(lhs, rhs, rtol)
    detail = {"fragmentation": frag, "diffusion": diff, "coagulation": coag}
    if not ok:
        detail["lge1"] = lge1_check(ops, phi, r, consts.delta_r, rtol).to_dict()
        detail["lge2"] = lge2_check(ops, phi, r, rtol).to_dict()
        detail["lge3"] = lge3_check(ops, phi, r, consts, rtol).to_dict()
    return LemmaCheck("LGE4", lhs, rhs, margin, ok, detail)


# ---------------------------------------------------------------------------
# bounds in time
# ---------------------------------------------------------------------------


def _norm_r(state: DensityState, r: float) -> float:
    return moment(state, 1.0) + moment(state, r)


@dataclass(frozen=True)
class GronwallBound:
    """``t -> kappa exp(kappa t) (1 + r ||f||_r)`` with ``||f||_r = int (x + x^r) f``.

    ``K = kappa3 (1 + 2 M1(f))**(1/(1-theta))`` is the growth rate of
    ``1 + M1 + int w_r phi`` and ``kappa = max(K, (4r+2)/r)`` absorbs the
    sandwich constants.
    """

    r: float
    kappa: float
    K: float
    norm_f: float
    m1_f: float
    constants: MomentBoundConstants

    def log_value(self, t):
        t = np.asarray(t, dtype=float)
        return math.log(self.kappa) + self.kappa * t + math.log1p(self.r * self.norm_f)

    def value(self, t):
        with np.errstate(over="ignore"):
            return np.exp(self.log_value(t))

    def to_dict(self) -> dict:
        return {
            "r": self.r, "kappa": self.kappa, "K": self.K, "norm_f": self.norm_f, "m1_f": self.m1_f,
            "constants": self.constants.to_dict(),
        }


def gronwall_trajectory(f: DensityState, r: float, coeffs: RateCoefficients, diffusion: float = 1.0,
                        consts: MomentBoundConstants | None = None) -> GronwallBound:
    """Upper bound on ``int (x + x^r) phi(t)`` for ``r`` in ``(1, min(m, 2)]``."""
    if not 1.0 < r <= min(coeffs.m, 2.0) + 1e-12:
        raise ValueError("the Gronwall bound is for r in (1, min(m, 2)]")
    consts = _cached_constants(coeffs, float(r), float(diffusion)) if consts is None else consts
    m1 = moment(f, 1.0)
    K = consts.kappa3 * (1.0 + 2.0 * m1) ** consts.young_exponents[0]
    kappa = max(K, (4.0 * r + 2.0) / r)
    return GronwallBound(r, kappa, K, _norm_r(f, r), m1, consts)


@dataclass
class BootstrapLink:
    r: float
    log10_bound: float
    method: str
    vacuous: bool = False

    def to_dict(self) -> dict:
        val = self.log10_bound
        return {
            "r": self.r,
            "log10_bound": None if not math.isfinite(val) else val,
            "method": self.method,
            "vacuous": self.vacuous,
        }


def bootstrap_bound(f: DensityState, m: float, T: float, coeffs: RateCoefficients,
                    diffusion: float = 1.0) -> list[BootstrapLink]:
    """Chain of bounds on ``sup_{t<=T} int (x + x^{r_i}) phi`` for ``r_i = m - floor(m) + i``.

    Orders up to 2 use the Gronwall bound (order 1 is twice the mass); each
    higher order feeds the previous bound into
    ``mu_r <= (4r+2)/r (1 + r ||f||_r) exp(kappa3(r) (1 + mu_{r-1})**(1/(1-theta)) T)``.
    All bounds are carried as base-10 logarithms; a link whose logarithm
    overflows is marked vacuous.
    """
    n = int(math.floor(m + 1e-12))
    orders = [m - n + i for i in range(1, n + 1)]
    chain: list[BootstrapLink] = []
    ln_prev = None
    m1 = moment(f, 1.0)
    for r in orders:
        if r <= 1.0 + 1e-12:
            ln_mu = math.log(2.0 * m1) if m1 > 0 else -math.inf
            chain.append(BootstrapLink(r, ln_mu / math.log(10.0), "mass"))
        elif r <= 2.0 + 1e-12:
            gb = gronwall_trajectory(f, r, coeffs, diffusion)
            ln_mu = float(gb.log_value(T))
            chain.append(BootstrapLink(r, ln_mu / math.log(10.0), "gronwall"))
        else:
            consts = _cached_constants(coeffs, float(r), float(diffusion))
            p = consts.young_exponents[0]
            # log(1 + mu) computed stably for huge mu
            ln1p_prev = ln_prev + math.log1p(math.exp(-ln_prev)) if ln_prev > 0 else math.log1p(math.exp(ln_prev))
            with np.errstate(over="ignore"):
                growth = float(np.exp(np.float64(p * ln1p_prev)))
            exponent = consts.kappa3 * growth * T
            ln_mu = math.log((4.0 * r + 2.0) / r) + math.log1p(r * _norm_r(f, r)) + exponent
            vac = not math.isfinite(ln_mu)
            chain.append(BootstrapLink(r, ln_mu / math.log(10.0) if not vac else math.inf, "recursion", vac))
        ln_prev = ln_mu
        if chain[-1].vacuous:
            for rest in orders[len(chain):]:
                chain.append(BootstrapLink(rest, math.inf, "recursion", True))
            break
    return chain

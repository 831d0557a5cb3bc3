"""Scenario files: a sectioned key-value format read with :mod:`configparser`.

Sections and keys (all values are literals, no expressions)::

    [scenario]     name, description
    [rate]         family = power_law | tabulated; A, gamma | table
    [daughter]     family = power_law | tabulated; nu | table
    [kernel]       family = constant | bounded_product | smoluchowski |
                   multiplicative | k2 | k3 | k4 | tabulated;
                   kappa (first four) | K, alpha (k2/k3/k4) | table
    [coefficients] theta0, theta, m, and optional kstar, kstar_big (K*),
                   k0, kbig, alpha, delta2 overriding the closed-form
                   defaults (keys are case-insensitive)
    [grid]         spacing = geometric | uniform; n, x_min, x_max,
                   right_bc = dirichlet | noflux
    [initial]      family = gamma | zero | csv; amplitude, power, scale
                   (density amplitude * x**power * exp(-x/scale)) | path
    [run]          T_final, dt_init, dt_min, dt_max, output_every, mode,
                   diffusion, ledger_rtol, picard_window, picard_steps,
                   picard_tol
    [reports]      bounds = true|false, bound_order, lemma_states, seed

Relative table and CSV paths are resolved against the scenario file.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .coefficients import (
    BoundedProductKernel,
    ConstantKernel,
    MultiplicativeKernel,
    PowerLawDaughter,
    PowerLawRate,
    RateCoefficients,
    RateCoupledKernel,
    SmoluchowskiKernel,
    load_tabulated_daughter,
    load_tabulated_kernel,
    load_tabulated_rate,
    make_coefficients,
)
from .errors import ConfigError
from .grid import SizeGrid, read_state_csv
from .timestepper import RunConfig

SECTIONS = {
    "scenario": {"name", "description"},
    "rate": {"family", "a", "gamma", "table"},
    "daughter": {"family", "nu", "table"},
    "kernel": {"family", "kappa", "k", "alpha", "table"},
    "coefficients": {"theta0", "theta", "m", "kstar", "kstar_big", "k0", "kbig", "alpha", "delta2"},
    "grid": {"spacing", "n", "x_min", "x_max", "right_bc"},
    "initial": {"family", "amplitude", "power", "scale", "path"},
    "run": {"t_final", "dt_init", "dt_min", "dt_max", "output_every", "mode", "diffusion", "ledger_rtol",
            "picard_window", "picard_steps", "picard_tol"},
    "reports": {"bounds", "bound_order", "lemma_states", "seed"},
}
REQUIRED = ("rate", "daughter", "kernel", "coefficients", "grid", "initial", "run")


@dataclass
class Scenario:
    name: str
    description: str
    config: RunConfig
    reports: dict = field(default_factory=dict)
    source: str = ""
    initial_spec: dict = field(default_factory=dict)


def builtin_scenarios() -> list[str]:
    root = resources.files("coagfrag") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_path(name_or_path: str) -> Path:
    """A file path, or the name of a shipped scenario."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    candidate = resources.files("coagfrag") / "scenarios" / f"{name_or_path}.ini"
    if candidate.is_file():
        return Path(str(candidate))
    raise ConfigError(f"no scenario file or builtin scenario named {name_or_path!r}")


class _Reader:
    """Typed access to a parsed file with line-numbered diagnostics."""

    def __init__(self, parser: configparser.ConfigParser, text: str, path: Path):
        self.p = parser
        self.lines = text.splitlines()
        self.path = path

    def line_of(self, section: str, key: str | None = None) -> int | None:
        in_sec = False
        for i, line in enumerate(self.lines, 1):
            s = line.strip()
            m = re.match(r"\[(.+)\]$", s)
            if m:
                in_sec = m.group(1).strip().lower() == section
                if in_sec and key is None:
                    return i
                continue
            if in_sec and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
                return i
        return None

    def fail(self, section: str, key: str | None, msg: str):
        line = self.line_of(section, key)
        where = f"{self.path}:{line}" if line else str(self.path)
        target = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{where}: {target}: {msg}")

    def has(self, section: str, key: str) -> bool:
        return self.p.has_option(section, key)

    def text(self, section: str, key: str, default=None, choices=None) -> str:
        if not self.has(section, key):
            if default is None:
                self.fail(section, None, f"missing key {key!r}")
            return default
        val = self.p.get(section, key).strip()
        if choices is not None and val not in choices:
            self.fail(section, key, f"expected one of {sorted(choices)}, got {val!r}")
        return val

    def num(self, section: str, key: str, default=None, cast=float):
        if not self.has(section, key):
            if default is None:
                self.fail(section, None, f"missing key {key!r}")
            return default
        raw = self.p.get(section, key).strip()
        try:
            val = cast(raw)
        except ValueError:
            self.fail(section, key, f"not a number: {raw!r}")
        if cast is float and not np.isfinite(val):
            self.fail(section, key, f"not finite: {raw!r}")
        return val

    def opt_num(self, section: str, key: str):
        return self.num(section, key) if self.has(section, key) else None

    def flag(self, section: str, key: str, default: bool) -> bool:
        if not self.has(section, key):
            return default
        try:
            return self.p.getboolean(section, key)
        except ValueError:
            self.fail(section, key, "expected true or false")

    def path_value(self, section: str, key: str) -> Path:
        p = Path(self.text(section, key))
        return p if p.is_absolute() else (self.path.parent / p)


def _parse(path: Path) -> _Reader:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    rd = _Reader(parser, text, path)
    for sec in parser.sections():
        if sec not in SECTIONS:
            rd.fail(sec, None, f"unknown section; expected one of {sorted(SECTIONS)}")
        for key in parser.options(sec):
            if key not in SECTIONS[sec]:
                rd.fail(sec, key, "unknown key")
    for sec in REQUIRED:
        if not parser.has_section(sec):
            raise ConfigError(f"{path}: missing section [{sec}]")
        if not parser.options(sec):
            rd.fail(sec, None, "empty section")
    return rd


def _build_rate(rd: _Reader):
    fam = rd.text("rate", "family", choices={"power_law", "tabulated"})
    if fam == "tabulated":
        return load_tabulated_rate(rd.path_value("rate", "table"))
    return PowerLawRate(rd.num("rate", "a"), rd.num("rate", "gamma"))


def _build_daughter(rd: _Reader):
    fam = rd.text("daughter", "family", choices={"power_law", "tabulated"})
    if fam == "tabulated":
        return load_tabulated_daughter(rd.path_value("daughter", "table"))
    nu = rd.num("daughter", "nu", 0.0)
    if nu <= -1.0:
        rd.fail("daughter", "nu", "need nu > -1")
    return PowerLawDaughter(nu)


def _build_kernel(rd: _Reader, rate):
    simple = {"constant": ConstantKernel, "bounded_product": BoundedProductKernel,
              "smoluchowski": SmoluchowskiKernel, "multiplicative": MultiplicativeKernel}
    fam = rd.text("kernel", "family", choices=set(simple) | {"k2", "k3", "k4", "tabulated"})
    if fam in simple:
        kappa = rd.num("kernel", "kappa")
        if kappa < 0:
            rd.fail("kernel", "kappa", "must be nonnegative")
        return simple[fam](kappa)
    if fam == "tabulated":
        return load_tabulated_kernel(rd.path_value("kernel", "table"))
    K = rd.num("kernel", "k")
    if K < 0:
        rd.fail("kernel", "k", "must be nonnegative")
    return RateCoupledKernel(fam, K, rd.num("kernel", "alpha"), rate)


def _build_coefficients(rd: _Reader) -> RateCoefficients:
    a = _build_rate(rd)
    b = _build_daughter(rd)
    k = _build_kernel(rd, a)
    sec = "coefficients"
    overrides = {
        "kstar": rd.opt_num(sec, "kstar"),
        "Kstar": rd.opt_num(sec, "kstar_big"),
        "k0": rd.opt_num(sec, "k0"),
        "Kbig": rd.opt_num(sec, "kbig"),
        "alpha": rd.opt_num(sec, "alpha"),
        "delta2": rd.opt_num(sec, "delta2"),
    }
    return make_coefficients(a, b, k, rd.num(sec, "theta0"), rd.num(sec, "theta"), rd.num(sec, "m"), **overrides)


def _build_grid(rd: _Reader, refine: int) -> tuple[SizeGrid, str]:
    spacing = rd.text("grid", "spacing", "geometric", {"geometric", "uniform"})
    n = rd.num("grid", "n", cast=int)
    if n < 2:
        rd.fail("grid", "n", "need at least 2 cells")
    lo, hi = rd.num("grid", "x_min"), rd.num("grid", "x_max")
    if not 0 < lo < hi:
        rd.fail("grid", "x_min", "need 0 < x_min < x_max")
    grid = (SizeGrid.geometric if spacing == "geometric" else SizeGrid.uniform)(n, lo, hi)
    if refine != 1:
        grid = grid.refine(refine)
    return grid, rd.text("grid", "right_bc", "dirichlet", {"dirichlet", "noflux"})


def _build_initial(rd: _Reader, grid: SizeGrid):
    fam = rd.text("initial", "family", choices={"gamma", "zero", "csv"})
    spec = {"family": fam}
    if fam == "zero":
        return (lambda x: np.zeros_like(np.asarray(x, dtype=float))), spec
    if fam == "csv":
        path = rd.path_value("initial", "path")
        try:
            state = read_state_csv(path, grid)
        except (OSError, ValueError) as exc:
            rd.fail("initial", "path", str(exc))
        if np.any(state.phi < 0):
            rd.fail("initial", "path", "initial density must be nonnegative")
        spec["path"] = str(path)
        return state, spec
    amp = rd.num("initial", "amplitude", 1.0)
    power = rd.num("initial", "power", 1.0)
    scale = rd.num("initial", "scale", 1.0)
    if amp < 0 or scale <= 0 or power < 0:
        rd.fail("initial", None, "need amplitude >= 0, power >= 0, scale > 0")
    spec.update(amplitude=amp, power=power, scale=scale)

    def f(x, amp=amp, power=power, scale=scale):
        x = np.asarray(x, dtype=float)
        return amp * x**power * np.exp(-x / scale)

    return f, spec


def load_scenario(name_or_path: str, grid_refine: int = 1) -> Scenario:
    """Parse a scenario file (or builtin name) into a :class:`Scenario`.

    Raises
    ------
    ConfigError
        With the file and line of the offending entry.
    """
    if grid_refine < 1:
        raise ConfigError("--grid-refine must be a positive integer")
    path = resolve_path(name_or_path)
    rd = _parse(path)
    coeffs = _build_coefficients(rd)
    grid, right_bc = _build_grid(rd, grid_refine)
    initial, init_spec = _build_initial(rd, grid)
    sec = "run"
    try:
        cfg = RunConfig(
            coeffs=coeffs, grid=grid, initial=initial,
            T_final=rd.num(sec, "t_final"),
            dt_init=rd.num(sec, "dt_init", 1e-4),
            dt_min=rd.num(sec, "dt_min", 1e-12),
            dt_max=rd.num(sec, "dt_max", 1e-2),
            output_every=rd.opt_num(sec, "output_every"),
            mode=rd.text(sec, "mode", "imex"),
            diffusion=rd.num(sec, "diffusion", 1.0),
            right_bc=right_bc,
            ledger_rtol=rd.num(sec, "ledger_rtol", 1e-8),
            picard_window=rd.num(sec, "picard_window", 0.05),
            picard_steps=rd.num(sec, "picard_steps", 64, cast=int),
            picard_tol=rd.num(sec, "picard_tol", 1e-10),
            name=rd.text("scenario", "name", path.stem) if rd.p.has_section("scenario") else path.stem,
        )
    except ConfigError as exc:
        rd.fail(sec, None, str(exc))
    reports = {
        "bounds": rd.flag("reports", "bounds", True),
        "bound_order": rd.opt_num("reports", "bound_order"),
        "lemma_states": rd.num("reports", "lemma_states", 0, cast=int),
        "seed": rd.num("reports", "seed", 0, cast=int),
    }
    desc = rd.text("scenario", "description", "") if rd.p.has_section("scenario") else ""
    return Scenario(cfg.name, desc, cfg, reports, str(path), init_spec)

"""Compare the compiled kernels with their pure-numpy twins.

Times the coagulation rate loop and the tridiagonal sweep directly, then a
short end-to-end run under each backend in a fresh interpreter (the backend
is fixed at import time by ``COAGFRAG_USE_NUMBA``).

    python3 benchmarks/bench_kernels.py --n 512 --repeat 50
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from coagfrag import kernels
from coagfrag._accel import HAVE_NUMBA
from coagfrag.config import load_scenario
from coagfrag.grid import SizeGrid, project_initial
from coagfrag.operators import assemble

END_TO_END = """
import time, json
from coagfrag.config import load_scenario
from coagfrag.timestepper import run
from coagfrag._accel import backend_name
sc = load_scenario("theorem12")
cfg = sc.config
cfg.T_final = {T}
cfg.output_every = {T}
run(cfg)  # warm-up (and numba compilation)
t0 = time.perf_counter()
tr = run(cfg)
print(json.dumps({{"backend": backend_name(), "seconds": time.perf_counter() - t0, "steps": tr.steps_accepted}}))
"""


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_coag(n: int, repeat: int) -> dict:
    sc = load_scenario("theorem12")
    grid = sc.config.grid if n == sc.config.grid.n else SizeGrid.geometric(n, 1e-4, 1e3)
    ops = assemble(sc.config.coeffs, grid)
    phi = project_initial(sc.config.initial, grid).phi
    c = ops.coag
    args = (phi, phi, grid.widths, grid.centers, c.pi, c.pj, c.kij, c.tgt, c.whi)
    out = {"pairs": int(c.pi.size), "numpy_s": best_of(lambda: kernels.coag_rates_vec(*args), repeat)}
    ref = kernels.coag_rates_vec(*args)
    if HAVE_NUMBA:
        kernels.coag_rates_loop(*args)
        out["numba_s"] = best_of(lambda: kernels.coag_rates_loop(*args), repeat)
        got = kernels.coag_rates_loop(*args)
        out["max_rel_diff"] = float(np.max(np.abs(got[0] - ref[0])) / np.max(np.abs(ref[0])))
    return out


def bench_thomas(n: int, repeat: int) -> dict:
    rng = np.random.default_rng(0)
    lower = -rng.uniform(0.1, 1.0, n)
    upper = -rng.uniform(0.1, 1.0, n)
    diag = 2.5 + rng.uniform(0.0, 1.0, n)
    rhs = rng.normal(size=n)
    out = {"numpy_s": best_of(lambda: kernels.thomas_vec(lower, diag, upper, rhs), repeat)}
    if HAVE_NUMBA:
        kernels.thomas_loop(lower, diag, upper, rhs)
        out["numba_s"] = best_of(lambda: kernels.thomas_loop(lower, diag, upper, rhs), repeat)
        out["max_abs_diff"] = float(np.max(np.abs(kernels.thomas_loop(lower, diag, upper, rhs)
                                                  - kernels.thomas_vec(lower, diag, upper, rhs))))
    return out


def bench_end_to_end(T: float) -> list[dict]:
    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, COAGFRAG_USE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", END_TO_END.format(T=T)], env=env,
                             capture_output=True, text=True, check=True)
        rows.append(json.loads(res.stdout.strip().splitlines()[-1]))
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=512, help="number of cells")
    p.add_argument("--repeat", type=int, default=30)
    p.add_argument("--horizon", type=float, default=0.2, help="simulated time for the end-to-end run")
    p.add_argument("--skip-end-to-end", action="store_true")
    args = p.parse_args(argv)

    coag = bench_coag(args.n, args.repeat)
    thomas = bench_thomas(args.n, args.repeat)
    print(f"coagulation rates, N={args.n} ({coag['pairs']} pairs)")
    print(f"  numpy  {coag['numpy_s'] * 1e3:8.3f} ms")
    if "numba_s" in coag:
        print(f"  numba  {coag['numba_s'] * 1e3:8.3f} ms   speed-up {coag['numpy_s'] / coag['numba_s']:.1f}x"
              f"   max rel diff {coag['max_rel_diff']:.1e}")
    print(f"tridiagonal solve, N={args.n}")
    print(f"  numpy  {thomas['numpy_s'] * 1e6:8.1f} us")
    if "numba_s" in thomas:
        print(f"  numba  {thomas['numba_s'] * 1e6:8.1f} us   speed-up {thomas['numpy_s'] / thomas['numba_s']:.1f}x")
    if not args.skip_end_to_end:
        for row in bench_end_to_end(args.horizon):
            print(f"end-to-end theorem12 to t={args.horizon:g} [{row['backend']}]: "
                  f"{row['seconds']:.2f} s, {row['steps']} steps")
    return 0


if __name__ == "__main__":
    sys.exit(main())

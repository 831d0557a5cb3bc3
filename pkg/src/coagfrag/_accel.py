"""Backend selection for the compiled kernels.

The hot loops in :mod:`coagfrag.kernels` are compiled with numba when it is
importable. Setting ``COAGFRAG_USE_NUMBA=0`` in the environment forces the
pure-numpy implementations, which is useful for debugging and for the
benchmark that compares the two.
"""
from __future__ import annotations

import os

_FALSE = {"0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("COAGFRAG_USE_NUMBA", "1").strip().lower() not in _FALSE


try:  # pragma: no cover - exercised implicitly by whichever path is active
    if not _numba_requested():
        raise ImportError("numba disabled by COAGFRAG_USE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """Compile with ``numba.njit`` if available, otherwise return the function unchanged."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"

"""Numba availability and backend selection.

Set ``VACEWPE_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""

import os

DISABLE_ENV = "VACEWPE_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def numba_requested() -> bool:
    flag = os.environ.get(DISABLE_ENV, "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and numba_requested()


def njit(func):
    """Compile with ``numba.njit`` when available, else return ``func`` unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def resolve_backend(backend):
    """Map ``None``/"auto" to the configured default; validate explicit choices."""
    if backend is None or backend == "auto":
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        return "numpy"
    return backend

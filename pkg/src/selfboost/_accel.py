"""Backend selection for the compiled kernels.

Kernels run through numba when it is importable and ``SELFBOOST_DISABLE_NUMBA``
is unset (or ``0``). Setting the variable to ``1`` forces the pure-numpy path.
``set_backend`` switches at runtime, which the tests and the benchmark use.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("SELFBOOST_DISABLE_NUMBA", "").strip().lower()
_backend = "numpy" if (_FLAG in {"1", "true", "yes", "on"} or not HAVE_NUMBA) else "numba"


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


def backend():
    return _backend


def use_numba():
    return _backend == "numba"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous

"""Numba/numpy backend selection for the hot kernels.

Every performance-critical kernel ships in two variants: a numba ``@njit``
build and a vectorized pure-numpy fallback.  The active variant is chosen
once at import time from the ``TLON_BACKEND`` environment variable:

    TLON_BACKEND=auto    use numba when importable (default)
    TLON_BACKEND=numba   require numba, fail loudly if missing
    TLON_BACKEND=numpy   force the pure-numpy fallback

Both variants of a kernel stay importable regardless of the flag (the
benchmark harness times them side by side); the flag only controls which
one the library dispatches to.  Results are deterministic per backend;
the two backends may differ in the last floating-point bits because
summation orders differ.
"""

from __future__ import annotations

import os

_choice = os.environ.get("TLON_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"TLON_BACKEND must be auto|numba|numpy, got {_choice!r}")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    if _choice == "numba":
        raise
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _choice != "numpy"


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """numba.njit passthrough; identity decorator when numba is missing.

    Compilation is lazy, so decorating is free on the numpy path; the
    jitted variants are only compiled if something actually calls them.
    """
    if HAVE_NUMBA:
        from numba import njit as _njit

        return _njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def deco(fn):
        return fn

    return deco


def pick(numba_fn, numpy_fn):
    """Return the dispatch target for the active backend."""
    return numba_fn if USE_NUMBA else numpy_fn

"""Kernel backend selection: numba-jitted loops with a pure-numpy fallback.

Hot inner loops (belief-propagation decoding, division-algebra block
multiplication) ship in two functionally equivalent implementations. The
default is numba when importable; setting the environment variable
``CVQKD_PURE_NUMPY=1`` forces the vectorized numpy path everywhere. Call
sites may also override per call with ``backend="numba"|"numpy"``.
"""

import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def env_backend() -> str:
    """Backend selected by the environment: "numba" or "numpy"."""
    if os.environ.get("CVQKD_PURE_NUMPY", "0") == "1" or not HAVE_NUMBA:
        return "numpy"
    return "numba"


def resolve_backend(backend: str = "auto") -> str:
    if backend == "auto":
        return env_backend()
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend

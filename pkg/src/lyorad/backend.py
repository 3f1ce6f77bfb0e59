"""Kernel backend selection.

Hot kernels (the single-vial integrator and the 2D ray tracer) are compiled
with numba when it is importable. Setting LYORAD_NUMBA=0 in the environment
selects the plain NumPy/Python paths instead; results are identical either
way, only speed differs (see benchmarks/bench_kernels.py).
"""

import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None
    HAVE_NUMBA = False


def _env_flag(name: str, default: bool) -> bool:
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "off", "no")


# Resolved once at import time.
NUMBA_ENABLED = HAVE_NUMBA and _env_flag("LYORAD_NUMBA", True)


def compile_kernel(func):
    """Return the numba-compiled version of ``func``, or ``func`` itself."""
    if NUMBA_ENABLED:
        return njit(cache=True, nogil=True)(func)
    return func


def thread_count() -> int:
    """Worker bound for ray tracing, fits and sweeps (LYORAD_THREADS)."""
    raw = os.environ.get("LYORAD_THREADS")
    if raw is not None:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1

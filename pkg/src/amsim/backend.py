"""Numba/numpy backend selection for the hot kernels.

Kernels are written as plain loop code and jitted when numba is available.
Set ``AMSIM_PURE_NUMPY=1`` (or the standard ``NUMBA_DISABLE_JIT=1``) to run
the interpreted numpy fallback instead; ``amsim bench --compare-backends``
measures both paths.
"""

import os


def _env_disabled() -> bool:
    for var in ("AMSIM_PURE_NUMPY", "NUMBA_DISABLE_JIT"):
        if os.environ.get(var, "").strip() not in ("", "0"):
            return True
    return False


NUMBA_ENABLED = False

if not _env_disabled():
    try:
        import numba as _numba

        NUMBA_ENABLED = True
    except ImportError:
        _numba = None
else:
    _numba = None


def njit(func):
    """Jit a kernel when the numba backend is active, else return it as-is."""
    if NUMBA_ENABLED:
        return _numba.njit(func, cache=True, nogil=True)
    return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"

"""Kernel compilation switch.

Hot kernels are plain numpy/math code decorated with :func:`kernel`. When numba
is importable and ``BUMPERCAR_NO_NUMBA`` is unset (or ``0``), they are compiled
with ``numba.njit``; otherwise the same functions run as ordinary Python, and
callers that care take a vectorized numpy route instead of a scalar loop.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

_DISABLED = os.environ.get("BUMPERCAR_NO_NUMBA", "").strip() not in ("", "0")

USE_NUMBA = numba is not None and not _DISABLED


def kernel(fn):
    if not USE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

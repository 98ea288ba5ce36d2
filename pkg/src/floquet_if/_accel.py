"""Optional numba acceleration.

Set ``FLOQUET_IF_DISABLE_NUMBA=1`` to force the pure-numpy code paths.
The flag is read once at import time.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


NUMBA_DISABLED = _flag("FLOQUET_IF_DISABLE_NUMBA")
HAVE_NUMBA = numba is not None and not NUMBA_DISABLED


def njit(f=None, **options):
    """``numba.njit`` when available, identity decorator otherwise."""
    options.setdefault("cache", True)
    if numba is None:
        if f is None:
            return lambda g: g
        return f
    if f is None:
        return lambda g: numba.njit(g, **options)
    return numba.njit(f, **options)

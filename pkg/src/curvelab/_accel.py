"""Numba shim. Set ``CURVELAB_DISABLE_NUMBA=1`` to force the pure-numpy kernels."""
import os

DISABLED = os.environ.get("CURVELAB_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kw):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

USE_NUMBA = HAVE_NUMBA and not DISABLED

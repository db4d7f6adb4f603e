"""Optional numba compilation.

Set ``CLEARING_LAB_DISABLE_NUMBA=1`` before import to route every hot
kernel through its pure-numpy counterpart instead.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_FLAG = os.environ.get("CLEARING_LAB_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with the package defaults, or a no-op when numba is off.

    Usable bare (``@njit``) or with options (``@njit(inline="always")``).
    """
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return njit()(args[0])
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)

    def decorator(func):
        if USE_NUMBA:
            return numba.njit(*args, **kwargs)(func)
        return func

    return decorator


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"

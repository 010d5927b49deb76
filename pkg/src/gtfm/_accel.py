"""Optional numba acceleration for the hot numeric kernels.

Every kernel in :mod:`gtfm.kernels` exists twice: a loop-style version
compiled with ``numba.njit`` and a vectorised numpy version.  The numpy path
is used when numba is missing or when the environment variable
``GTFM_DISABLE_NUMBA`` is set to ``1``/``true``/``yes`` before import.
"""

import os

_FLAG = os.environ.get("GTFM_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` with numba when available, else return it untouched."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def pick(nb_impl, np_impl):
    """Return the implementation selected by the current acceleration mode."""
    return nb_impl if USE_NUMBA else np_impl

"""Backend selection for the hot moment kernels.

``SHYGAMP_BACKEND`` picks the implementation: ``numba`` (jitted loops,
default when numba imports cleanly), ``numpy`` (pure vectorized fallback),
or ``auto``.  The numpy module is always importable for oracles and
cross-checks regardless of the active backend.
"""

import os

from . import numpy_impl

_requested = os.environ.get("SHYGAMP_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SHYGAMP_BACKEND must be auto, numba, or numpy; got {_requested!r}"
    )

try:
    if _requested in ("auto", "numba"):
        from . import numba_impl  # jit compile deferred to first call
    else:
        numba_impl = None
except ImportError:
    if _requested == "numba":
        raise
    numba_impl = None

active = numba_impl if numba_impl is not None else numpy_impl


def backend_name() -> str:
    return active.BACKEND

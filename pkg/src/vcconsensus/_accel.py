"""Numba switch.

Set ``VCCONSENSUS_NUMBA=0`` to force the pure-numpy kernels. When numba is
not importable the numpy kernels are used regardless of the flag.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("VCCONSENSUS_NUMBA", "1").strip().lower()

try:  # pragma: no cover - depends on the environment
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("0", "false", "no", "off")

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if _numba is None:
        return func
    return _numba.njit(**numba_default)(func)

"""Kernel backend selection.

The compiled extension is preferred; set ``BLOCKQP_PURE_PYTHON=1`` to force
the NumPy fallback (useful for benchmarking and for platforms without a
C compiler).
"""

import os

from . import _pykernels

try:
    if os.environ.get("BLOCKQP_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

NAME = "compiled" if _compiled is not None else "python"
kernels = BACKENDS[NAME]


def get(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return kernels
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None

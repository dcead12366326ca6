"""Kernel backend selection.

The ragged pooling kernels exist twice: a Cython extension
(``sethar.backend._poolcore``) and a numpy fallback
(``sethar.backend.py_kernels``). The compiled version is preferred at
import time; set ``SETHAR_PURE_PYTHON=1`` to force the fallback. Both
produce bitwise-identical results (see tests/test_backend.py); the
difference is speed only. ``python -m sethar.backend.bench`` compares
them.
"""

import os

from . import py_kernels

_FORCED_PURE = os.environ.get("SETHAR_PURE_PYTHON", "").strip().lower() in (
    "1", "true", "yes",
)

if _FORCED_PURE:
    _impl = py_kernels
    BACKEND = "python"
else:
    try:
        from . import _poolcore as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = py_kernels
        BACKEND = "python"

pool_forward = _impl.pool_forward
pool_backward = _impl.pool_backward


def available_backends():
    """Map of backend name to kernel module, for tests and the bench."""
    out = {"python": py_kernels}
    try:
        from . import _poolcore
        out["compiled"] = _poolcore
    except ImportError:
        pass
    return out

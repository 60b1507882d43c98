"""Kernel backend selection.

The compiled extension is preferred; set ``COSEG_PURE_PYTHON=1`` to force the
pure-Python fallback.
"""
import os

from . import _kernels_py

if os.environ.get("COSEG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

bk_maxflow = _impl.bk_maxflow
slic_assign = _impl.slic_assign


def backend(name):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _kernels_py
    from . import _kernels
    return _kernels

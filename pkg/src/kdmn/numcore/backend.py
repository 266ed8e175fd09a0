"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the numpy
fallback is always available. Set KDMN_FORCE_PY_KERNELS=1 before import to
pin the fallback (used by the parity tests and the benchmark).
"""

import os

from . import kernels_py

_impl = kernels_py
_name = "python"

if os.environ.get("KDMN_FORCE_PY_KERNELS", "") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        _name = "compiled"


def kernels():
    """The active kernel module."""
    return _impl


def backend_name() -> str:
    return _name

"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``DROPAGG_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DROPAGG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def get_backend(name=None):
    """Return the kernel module called ``name`` (``"cython"`` or ``"python"``)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


keystream = _impl.keystream
expand_mod = _impl.expand_mod
masked_accumulate = _impl.masked_accumulate
gaussian = _impl.gaussian

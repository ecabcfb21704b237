"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``CHANTWIN_PURE_PYTHON`` is set to a non-empty value other than ``0``, the
numpy implementation is used. Both expose ``launch``, ``detect``,
``occluded`` and ``scatter_visible`` with identical semantics.
"""

import os

from . import _kernels_py

PURE_ENV = "CHANTWIN_PURE_PYTHON"


def _compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


def get_backend(name=None):
    """Kernel module by name (``"compiled"`` or ``"python"``); ``None`` picks the default."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        mod = _compiled()
        if mod is None:
            raise ImportError("compiled ray kernels are not built")
        return mod
    if name is not None:
        raise ValueError(f"unknown backend {name!r}")
    if os.environ.get(PURE_ENV, "") not in ("", "0"):
        return _kernels_py
    return _compiled() or _kernels_py


_impl = get_backend()
BACKEND = "python" if _impl is _kernels_py else "compiled"
launch = _impl.launch
detect = _impl.detect
occluded = _impl.occluded
scatter_visible = _impl.scatter_visible

"""Kernel backend selection.

The compiled Cython core is preferred when the extension built; the NumPy
implementation is the always-available fallback.  Both expose the same
``solver_step`` contract and are cross-checked in the test suite.
"""

from __future__ import annotations

from . import _numpy, status

try:
    from . import _core
    HAVE_COMPILED = True
except ImportError:
    _core = None
    HAVE_COMPILED = False

DEFAULT_BACKEND = "compiled" if HAVE_COMPILED else "numpy"


def get_backend(name: str = "auto"):
    """Resolve a backend name to the module implementing ``solver_step``."""
    if name == "auto":
        name = DEFAULT_BACKEND
    if name == "numpy":
        return _numpy
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not available; "
                               "build the extension or use backend='numpy'")
        return _core
    raise ValueError(f"unknown backend {name!r}")


__all__ = ["get_backend", "status", "HAVE_COMPILED", "DEFAULT_BACKEND"]

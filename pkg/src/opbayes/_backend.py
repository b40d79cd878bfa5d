"""Selects the numerical core: the compiled extension when it imports,
otherwise the pure-Python fallback. Set ``OPBAYES_PURE_PYTHON=1`` to force
the fallback."""

import os

if os.environ.get("OPBAYES_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        from . import _pykernels as kernels

BACKEND = kernels.BACKEND

__all__ = ["kernels", "BACKEND"]

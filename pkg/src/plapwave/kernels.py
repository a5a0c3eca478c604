"""Backend selection for the element kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used.  Set ``PLAPWAVE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("PLAPWAVE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

plap_energy = _impl.plap_energy
plap_residual = _impl.plap_residual
plap_tangent = _impl.plap_tangent
plap_residual_tangent = _impl.plap_residual_tangent

__all__ = [
    "BACKEND",
    "plap_energy",
    "plap_residual",
    "plap_tangent",
    "plap_residual_tangent",
]

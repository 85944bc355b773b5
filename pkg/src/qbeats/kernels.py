"""Backend selection for the propagation kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``QBEATS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("QBEATS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

lindblad_rhs = _impl.lindblad_rhs
rk4_run = _impl.rk4_run

__all__ = ["BACKEND", "lindblad_rhs", "rk4_run"]

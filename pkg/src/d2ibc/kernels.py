"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
pure-Python ``_core_py`` module. Set ``D2IBC_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _core_py

if os.environ.get("D2IBC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _core_py
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _core_py

BACKEND = "compiled" if _impl is not _core_py else "python"

minimize_poly_objective = _impl.minimize_poly_objective
poly_objective = _impl.poly_objective
pid_filter = _impl.pid_filter
integrated_lags = _impl.integrated_lags

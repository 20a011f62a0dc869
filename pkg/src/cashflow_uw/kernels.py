"""Backend selection for the hot kernels.

The compiled extension is used when importable; set
``CASHFLOW_UW_PURE_PYTHON=1`` to force the NumPy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("CASHFLOW_UW_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

auroc_counts = _impl.auroc_counts
best_split = _impl.best_split


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out

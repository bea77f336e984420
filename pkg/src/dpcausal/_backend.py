"""Pick the kernel implementation once, at import time.

``DPCAUSAL_BACKEND`` may be ``auto`` (default: compiled if importable),
``compiled`` (fail if the extension is missing) or ``python``.
"""

from __future__ import annotations

import os

from . import _kernels_py


def _load(choice: str):
    if choice == "python":
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "DPCAUSAL_BACKEND=compiled but the dpcausal._kernels extension is not built"
            ) from None
        return _kernels_py, "python"
    return _kernels, "compiled"


_choice = os.environ.get("DPCAUSAL_BACKEND", "auto").strip().lower() or "auto"
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"unknown DPCAUSAL_BACKEND {_choice!r}; use auto, compiled or python")

kernels, BACKEND = _load(_choice)


def available_backends() -> dict:
    """Name -> kernel module for every implementation that imports."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out

"""Backend selection for the dynamic-programming kernels.

The compiled extension is used when it was built; otherwise the pure-Python
module is imported. Setting ``AMPS_LAB_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("AMPS_LAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

MATCH, SUB, INS, DEL = _kernels_py.MATCH, _kernels_py.SUB, _kernels_py.INS, _kernels_py.DEL
edit_alignment = _impl.edit_alignment
lcs_length = _impl.lcs_length

__all__ = ["BACKEND", "MATCH", "SUB", "INS", "DEL", "edit_alignment", "lcs_length"]

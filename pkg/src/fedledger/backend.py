"""Kernel backend selection.

At import time the compiled Cython kernels are preferred; the NumPy
implementation is the fallback. Set FEDLEDGER_BACKEND=numpy (or =compiled)
to force a choice, e.g. for benchmarking.
"""

import os

from . import _kernels_py

_forced = os.environ.get("FEDLEDGER_BACKEND", "").strip().lower()

if _forced == "numpy":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "FEDLEDGER_BACKEND=compiled but the fedledger._kernels "
                "extension is not built; reinstall with a C compiler"
            ) from None
        kernels = _kernels_py


def active_backend() -> str:
    """Name of the kernel backend in use: 'compiled' or 'numpy'."""
    return kernels.BACKEND_NAME

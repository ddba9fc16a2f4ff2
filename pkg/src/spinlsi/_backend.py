"""Pick the compiled kernels when available, else the numpy fallback.

Set ``SPINLSI_BACKEND=python`` to force the fallback.
"""
import os

from . import _kernels_py

_forced = os.environ.get("SPINLSI_BACKEND", "").lower()

if _forced == "python":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        if _forced == "cython":
            raise
        kernels = _kernels_py

BACKEND = kernels.NAME
python_kernels = _kernels_py


def compiled_kernels():
    """Return the compiled module, or None when it was not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels

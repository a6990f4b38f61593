"""Kernel backend selection.

The compiled extension is used when it was built and imports cleanly;
otherwise the pure-Python twin is used. Set ``MAMIFUSE_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from mamifuse import _pykernels

BACKEND = "python"

if os.environ.get("MAMIFUSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from mamifuse import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

iterative_stratify = _impl.iterative_stratify
confusion_counts = _impl.confusion_counts
hierarchy_correct = _impl.hierarchy_correct
swap_refine = _impl.swap_refine

__all__ = ["BACKEND", "iterative_stratify", "swap_refine", "confusion_counts", "hierarchy_correct"]

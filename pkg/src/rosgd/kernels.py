"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation.  Set ``ROSGD_BACKEND=numpy`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("ROSGD_BACKEND", "").lower() == "numpy":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
fisher_yates = _impl.fisher_yates
sgd_paths = _impl.sgd_paths
sgd_final = _impl.sgd_final

__all__ = ["BACKEND", "fisher_yates", "sgd_paths", "sgd_final"]

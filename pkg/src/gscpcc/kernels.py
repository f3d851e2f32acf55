"""Kernel backend selection.

The compiled extension is preferred; set ``GSCPCC_BACKEND=python`` to force
the pure-Python fallback (or ``cython`` to require the extension).
"""

import os

from . import _pykernels

_requested = os.environ.get("GSCPCC_BACKEND", "").strip().lower()

if _requested in ("python", "py"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested in ("cython", "c"):
            raise
        _impl = _pykernels

BACKEND = _impl.BACKEND_NAME

encode_bits = _impl.encode_bits
bcjr_erase_tab = _impl.bcjr_erase_tab
de_uncoupled = _impl.de_uncoupled
de_coupled = _impl.de_coupled

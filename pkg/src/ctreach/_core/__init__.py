"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``CTREACH_PURE_PYTHON=1`` is set, the numpy/pure-Python versions are used.
Both expose ``reach_kernel``, ``mlp_forward`` and ``simulate_batch``.
"""

import os

from . import _pykernels

pykernels = _pykernels
ckernels = None

if os.environ.get("CTREACH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as ckernels
    except ImportError:  # extension not built
        ckernels = None

kernels = ckernels if ckernels is not None else pykernels
BACKEND = "cython" if ckernels is not None else "python"

OK, EXITED, DIVERGED = _pykernels.OK, _pykernels.EXITED, _pykernels.DIVERGED

__all__ = ["kernels", "pykernels", "ckernels", "BACKEND", "OK", "EXITED", "DIVERGED"]

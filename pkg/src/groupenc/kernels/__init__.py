"""Hot kernels for the R_NX evaluator.

The compiled extension ``_ckernels`` is used when it was built; otherwise
the numpy implementation in ``_pykernels`` is loaded. Setting
``GROUPENC_BACKEND=python`` forces the fallback. Both expose
``join_counts(hd, ld, n_threads)`` and ``neighbour_order(x, i)`` with
identical results.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("GROUPENC_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

if compiled_backend is not None:
    backend = compiled_backend
    BACKEND = "cython"
else:
    backend = python_backend
    BACKEND = "python"

join_counts = backend.join_counts
neighbour_order = backend.neighbour_order

__all__ = ["BACKEND", "backend", "compiled_backend", "python_backend", "join_counts", "neighbour_order"]

"""Hot-loop kernels with a compiled core and a numpy fallback.

The Cython extension (mimoloc._kernels._core) is built by setup.py when a
compiler is available; otherwise the numpy implementation is selected at
import time.  Both expose the same functions and produce identical results
(see tests/test_kernels.py for the parity suite and benchmarks/ for the
speed comparison).
"""

from . import _numpy as _py

try:  # pragma: no cover - exercised indirectly
    from . import _core as _impl
    HAVE_COMPILED = True
except ImportError:  # pragma: no cover
    _impl = _py
    HAVE_COMPILED = False

BACKEND = "compiled" if HAVE_COMPILED else "numpy"

path_objective = _impl.path_objective
numpy_path_objective = _py.path_objective

__all__ = ["path_objective", "numpy_path_objective", "HAVE_COMPILED",
           "BACKEND"]

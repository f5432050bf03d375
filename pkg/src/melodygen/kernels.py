"""Kernel backend selection.

The compiled extension (_kernels_cy) fuses the elementwise hot loops of
training; the pure-numpy twin (_kernels_py) is the fallback and the
reference in parity tests. Set MELODYGEN_PURE_PY=1 to force the fallback.
"""

import os

if os.environ.get("MELODYGEN_PURE_PY"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels_cy as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as impl

BACKEND = impl.NAME

sigmoid = impl.sigmoid
sigmoid_backward = impl.sigmoid_backward
tanh = impl.tanh
tanh_backward = impl.tanh_backward
softmax = impl.softmax
adam_update = impl.adam_update

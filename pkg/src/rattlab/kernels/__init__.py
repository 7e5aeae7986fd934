"""Hot inner-loop kernels with a compiled core and a numpy fallback.

The Cython extension ``_lstm_ext`` is used when it has been built;
otherwise the pure numpy versions in ``_reference`` are used. Set
``RATTLAB_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _reference

BACKEND = "python"
gates_forward = _reference.gates_forward
gates_backward = _reference.gates_backward
masked_xent = _reference.masked_xent

if not os.environ.get("RATTLAB_PURE_PYTHON"):
    try:
        from . import _lstm_ext
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        gates_forward = _lstm_ext.gates_forward
        gates_backward = _lstm_ext.gates_backward
        masked_xent = _lstm_ext.masked_xent

__all__ = ["BACKEND", "gates_backward", "gates_forward", "masked_xent"]

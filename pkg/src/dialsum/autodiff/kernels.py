"""Selects the GRU recurrence kernel implementation at import time.

The compiled extension is used when it was built and ``DIALSUM_PURE_PYTHON``
is unset; otherwise the numpy fallback is used. ``BACKEND`` names the choice.
"""

import os

from . import _gru_py

if os.environ.get("DIALSUM_PURE_PYTHON"):
    _impl = _gru_py
    BACKEND = "python"
else:
    try:
        from . import _gru_ext as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _gru_py
        BACKEND = "python"

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward

__all__ = ["BACKEND", "gru_forward", "gru_backward"]

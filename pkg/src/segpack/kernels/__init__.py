"""Backend selection for the recurrent sequence kernels.

The compiled Cython kernel is preferred when its extension module built;
otherwise the pure-numpy reference is used.  Set ``SEGPACK_BACKEND`` to
``numpy`` or ``compiled`` to force a choice (forcing ``compiled`` raises if
the extension is unavailable).  Both backends share one calling convention
and agree numerically to float64 rounding; ``benchmarks/bench_backends.py``
compares their speed.
"""

from __future__ import annotations

import os

from . import reference

_requested = os.environ.get("SEGPACK_BACKEND", "").strip().lower()

if _requested in ("numpy", "reference", "python"):
    _impl = reference
elif _requested == "compiled":
    from . import _gru_cy as _impl  # type: ignore[no-redef]
elif _requested == "":
    try:
        from . import _gru_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = reference
else:
    raise ValueError(f"unknown SEGPACK_BACKEND value {_requested!r}")

BACKEND: str = _impl.NAME
gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward

__all__ = ["BACKEND", "gru_forward", "gru_backward", "reference"]

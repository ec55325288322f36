"""Kernel backend selection.

The hot per-query loops have two interchangeable implementations: a
compiled Cython extension (``rankbound.kernels._fast``) and a vectorized
NumPy fallback (``rankbound.kernels.reference``).  The compiled backend is
picked automatically when importable; set ``RANKBOUND_KERNELS`` to
``numpy`` or ``compiled`` to force one side (``compiled`` raises if the
extension is missing).
"""

import os

from . import reference

_requested = os.environ.get("RANKBOUND_KERNELS", "auto")
if _requested not in {"auto", "compiled", "numpy"}:
    raise RuntimeError(f"RANKBOUND_KERNELS must be auto, compiled or numpy, "
                       f"got {_requested!r}")

_impl = reference
BACKEND = "numpy"
if _requested in {"auto", "compiled"}:
    try:
        from . import _fast
        _impl = _fast
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise

sigmoid = reference.sigmoid
step_bound = _impl.step_bound
step_bound_grad = _impl.step_bound_grad
exact_rank_stats = _impl.exact_rank_stats
smooth_rank_minus = _impl.smooth_rank_minus
smooth_rank_minus_backward = _impl.smooth_rank_minus_backward
smooth_ap_sigmoid = _impl.smooth_ap_sigmoid


def compiled_available() -> bool:
    try:
        from . import _fast  # noqa: F401
        return True
    except ImportError:
        return False

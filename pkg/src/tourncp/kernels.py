"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``TOURNCP_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if not os.environ.get("TOURNCP_PURE_PYTHON"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

count_affine_wins = _impl.count_affine_wins
count_lse_wins = _impl.count_lse_wins

__all__ = ["BACKEND", "count_affine_wins", "count_lse_wins"]

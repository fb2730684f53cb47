"""Kernel dispatch: compiled core when built, NumPy fallback otherwise.

Set ``TDCQKD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py
from ._kernels_py import counter_normal, counter_uniform, hit_phases, seed_key  # noqa: F401

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TDCQKD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

code_density = _impl.code_density
match_greedy = _impl.match_greedy

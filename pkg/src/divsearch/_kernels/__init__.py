"""Greedy selection kernels: compiled core with a pure-NumPy fallback.

The compiled extension is optional; when it failed to build (no compiler, no
Cython) the NumPy implementation is selected at import time. Both expose the
same `greedy_select` signature and must produce identical selections.
"""
from __future__ import annotations

from typing import Callable

from divsearch._kernels import dpp_py

try:
    from divsearch._kernels import _dpp_cy
except ImportError:
    _dpp_cy = None

ACTIVE_BACKEND = "compiled" if _dpp_cy is not None else "python"

greedy_select: Callable = (
    _dpp_cy.greedy_select if _dpp_cy is not None else dpp_py.greedy_select
)


def backends() -> dict[str, Callable]:
    """All available greedy_select implementations, keyed by backend name."""
    found = {"python": dpp_py.greedy_select}
    if _dpp_cy is not None:
        found["compiled"] = _dpp_cy.greedy_select
    return found

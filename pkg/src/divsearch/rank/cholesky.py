"""Incremental Cholesky factorization with running log-determinant.

Extending the factor of an n x n positive-definite matrix by one row costs
O(n^2) and yields the log-det increment 2*ln(d) where d is the new diagonal
element of the factor.
"""
from __future__ import annotations

import math

import numpy as np

from divsearch.errors import NumericalError


class IncrementalCholesky:
    """Grows a lower-triangular factor one row/column at a time."""

    def __init__(self, capacity: int = 8):
        self._factor = np.zeros((max(capacity, 1), max(capacity, 1)), dtype=np.float64)
        self._size = 0
        self._log_det = 0.0

    @property
    def size(self) -> int:
        return self._size

    @property
    def log_det(self) -> float:
        return self._log_det

    def factor(self) -> np.ndarray:
        """Copy of the current lower-triangular factor."""
        return self._factor[: self._size, : self._size].copy()

    def _ensure_capacity(self, n: int) -> None:
        if n <= self._factor.shape[0]:
            return
        grown = np.zeros((2 * n, 2 * n), dtype=np.float64)
        grown[: self._size, : self._size] = self._factor[: self._size, : self._size]
        self._factor = grown

    def extend(self, new_row: np.ndarray) -> float:
        """Extend by one row: similarities to existing items plus the diagonal.

        Returns the log-det increment; raises NumericalError if the extended
        matrix is not positive definite.
        """
        row = np.asarray(new_row, dtype=np.float64)
        n = self._size
        if row.shape != (n + 1,):
            raise ValueError(f"expected row of length {n + 1}, got {row.shape}")
        self._ensure_capacity(n + 1)
        factor = self._factor
        coeffs = np.empty(n, dtype=np.float64)
        for i in range(n):
            coeffs[i] = (row[i] - factor[i, :i] @ coeffs[:i]) / factor[i, i]
        pivot = row[n] - coeffs @ coeffs
        if not np.isfinite(pivot) or pivot <= 0.0:
            raise NumericalError(
                f"non-positive pivot {pivot} at size {n + 1}: matrix is not PD"
            )
        factor[n, :n] = coeffs
        factor[n, n] = math.sqrt(pivot)
        self._size = n + 1
        delta = math.log(pivot)
        self._log_det += delta
        return delta


def log_det_incremental(
    state: IncrementalCholesky | None, new_row: np.ndarray
) -> tuple[IncrementalCholesky, float]:
    """Extend a factor state by one row, returning (state, log-det delta)."""
    if state is None:
        state = IncrementalCholesky()
    delta = state.extend(new_row)
    return state, delta

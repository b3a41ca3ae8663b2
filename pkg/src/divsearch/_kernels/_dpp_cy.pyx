# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled windowed greedy selection kernel.

Semantics mirror dpp_py.greedy_select exactly: same objective, same tie rule
(first candidate within tie_tol of the step maximum), same grow-then-rebuild
handling of the repulsion window. The forward substitution is laid out as
contiguous sweeps over the candidate axis so the compiler can vectorize it.
"""

from libc.math cimport INFINITY, isfinite, log, sqrt

import numpy as np

from divsearch.errors import NumericalError


cdef int _cholesky_inplace(double[:, ::1] block, double[:, ::1] factor, int n) noexcept nogil:
    """Lower Cholesky of block into factor; returns -1 on a bad pivot."""
    cdef int i, j, k
    cdef double acc
    for i in range(n):
        for j in range(i + 1):
            acc = block[i, j]
            for k in range(j):
                acc -= factor[i, k] * factor[j, k]
            if i == j:
                if acc <= 0.0 or not isfinite(acc):
                    return -1
                factor[i, i] = sqrt(acc)
            else:
                factor[i, j] = acc / factor[j, j]
    return 0


def greedy_select(sim, utilities, double theta, int window, int limit,
                  double tie_tol=1e-9):
    """Greedily pick up to `limit` items maximizing 2*theta*u + log det."""
    cdef double[:, ::1] s = np.ascontiguousarray(sim, dtype=np.float64)
    cdef double[::1] util = np.ascontiguousarray(utilities, dtype=np.float64)
    cdef int n = util.shape[0]
    if limit > n:
        limit = n
    if limit <= 0:
        return []

    cdef unsigned char[::1] remaining = np.ones(n, dtype=np.uint8)
    cdef double[::1] objective = np.empty(n, dtype=np.float64)
    cdef double[::1] pivots = np.empty(n, dtype=np.float64)
    # cmat[i, :] holds the i-th forward-substitution coefficient per candidate
    cdef double[:, ::1] cmat = np.zeros((window, n), dtype=np.float64)
    cdef long long[::1] widx = np.zeros(window, dtype=np.int64)
    cdef double[:, ::1] factor = np.zeros((window, window), dtype=np.float64)
    cdef double[:, ::1] block = np.zeros((window, window), dtype=np.float64)

    selection = []
    cdef int m = 0
    cdef double log_det_w = 0.0
    cdef int step, y, i, j, chosen, row
    cdef double best_obj, fij, fii, base, pivot

    for step in range(limit):
        for y in range(n):
            pivots[y] = s[y, y]
        for i in range(m):
            row = widx[i]
            for y in range(n):
                cmat[i, y] = s[row, y]
            for j in range(i):
                fij = factor[i, j]
                for y in range(n):
                    cmat[i, y] = cmat[i, y] - fij * cmat[j, y]
            fii = factor[i, i]
            for y in range(n):
                cmat[i, y] = cmat[i, y] / fii
                pivots[y] = pivots[y] - cmat[i, y] * cmat[i, y]

        best_obj = -INFINITY
        base = log_det_w
        for y in range(n):
            if not remaining[y]:
                objective[y] = -INFINITY
                continue
            pivot = pivots[y]
            if pivot > 0.0 and isfinite(pivot):
                objective[y] = 2.0 * theta * util[y] + base + log(pivot)
            else:
                objective[y] = -INFINITY
            if objective[y] > best_obj:
                best_obj = objective[y]
        if not isfinite(best_obj):
            raise NumericalError(
                "greedy objective is not finite: similarity matrix not PD after jitter"
            )
        chosen = -1
        for y in range(n):
            if remaining[y] and objective[y] >= best_obj - tie_tol:
                chosen = y
                break
        selection.append(chosen)
        remaining[chosen] = 0

        if m < window:
            for i in range(m):
                factor[m, i] = cmat[i, chosen]
            factor[m, m] = sqrt(pivots[chosen])
            widx[m] = chosen
            m += 1
            log_det_w += log(pivots[chosen])
        else:
            for i in range(window - 1):
                widx[i] = widx[i + 1]
            widx[window - 1] = chosen
            for i in range(window):
                for j in range(window):
                    block[i, j] = s[widx[i], widx[j]]
            if _cholesky_inplace(block, factor, window) != 0:
                raise NumericalError("window similarity block is not PD after jitter")
            log_det_w = 0.0
            for i in range(window):
                log_det_w += 2.0 * log(factor[i, i])

    return selection

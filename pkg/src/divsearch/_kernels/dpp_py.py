"""Pure-NumPy windowed greedy selection kernel.

Reference implementation of the hot loop; the compiled twin in _dpp_cy.pyx
must produce identical selection sequences. Per step the factor of the
repulsion window is either extended by the chosen item's column (window still
growing) or rebuilt from scratch after the window slides.
"""
from __future__ import annotations

import math

import numpy as np

from divsearch.errors import NumericalError


def greedy_select(
    sim: np.ndarray,
    utilities: np.ndarray,
    theta: float,
    window: int,
    limit: int,
    tie_tol: float = 1e-9,
) -> list[int]:
    """Greedily pick up to `limit` items maximizing 2*theta*u + log det.

    `sim` is the jittered similarity matrix (diagonal slightly above 1).
    The determinant is taken over the last `window` selections plus the
    candidate. Ties within `tie_tol` go to the lowest index.
    """
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    utilities = np.asarray(utilities, dtype=np.float64)
    n = len(utilities)
    limit = min(limit, n)
    if limit <= 0:
        return []

    diag = np.diag(sim).copy()
    remaining = np.ones(n, dtype=bool)
    selection: list[int] = []
    widx: list[int] = []
    factor = np.zeros((window, window), dtype=np.float64)
    log_det_w = 0.0

    while len(selection) < limit:
        cands = np.flatnonzero(remaining)
        m = len(widx)
        if m:
            rows = sim[np.ix_(widx, cands)]
            coeffs = np.empty_like(rows)
            for i in range(m):
                coeffs[i] = (rows[i] - factor[i, :i] @ coeffs[:i]) / factor[i, i]
            pivots = diag[cands] - np.einsum("ij,ij->j", coeffs, coeffs)
        else:
            coeffs = None
            pivots = diag[cands].copy()

        with np.errstate(invalid="ignore", divide="ignore"):
            log_pivots = np.where(pivots > 0.0, np.log(np.maximum(pivots, 1e-300)), -np.inf)
        objective = 2.0 * theta * utilities[cands] + log_det_w + log_pivots
        best = objective.max()
        if not np.isfinite(best):
            raise NumericalError(
                "greedy objective is not finite: similarity matrix not PD after jitter"
            )
        pick = int(np.flatnonzero(objective >= best - tie_tol)[0])
        chosen = int(cands[pick])
        selection.append(chosen)
        remaining[chosen] = False

        if m < window:
            if m:
                factor[m, :m] = coeffs[:, pick]
            factor[m, m] = math.sqrt(pivots[pick])
            widx.append(chosen)
            log_det_w += float(log_pivots[pick])
        else:
            widx = widx[1:] + [chosen]
            block = sim[np.ix_(widx, widx)]
            try:
                factor[:, :] = np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                raise NumericalError(
                    "window similarity block is not PD after jitter"
                ) from None
            log_det_w = float(2.0 * np.log(np.diag(factor)).sum())

    return selection

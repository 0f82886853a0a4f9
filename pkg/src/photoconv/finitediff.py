"""Finite-difference weights and differentiation matrices on a uniform grid."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def fornberg_weights(x0: float, x, m: int) -> np.ndarray:
    """Weights for derivatives 0..m at ``x0`` from samples at ``x``.

    Fornberg's recursion; returns an array of shape (m + 1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


@lru_cache(maxsize=64)
def _diff_matrix_cached(n_points: int, order: int, accuracy: int, h: float) -> np.ndarray:
    # stencil width for a centred rule of the requested accuracy
    width = 2 * ((order + 1) // 2) - 1 + accuracy
    half = width // 2
    D = np.zeros((n_points, n_points))
    grid = np.arange(n_points, dtype=float)
    for i in range(n_points):
        lo = min(max(i - half, 0), n_points - width)
        if lo != i - half:
            # one-sided near a wall: one extra point keeps the accuracy order
            w = width + 1
            lo = min(max(i - half, 0), n_points - w)
        else:
            w = width
        idx = np.arange(lo, lo + w)
        D[i, idx] = fornberg_weights(float(i), grid[idx], order)[order]
    D /= h ** order
    D.setflags(write=False)
    return D


def diff_matrix(n_points: int, order: int, h: float, accuracy: int = 4) -> np.ndarray:
    """Dense matrix of the ``order``-th derivative on ``n_points`` uniform nodes.

    Centred stencils in the interior, one-sided (one point wider) near the
    ends, formally ``accuracy``-th order everywhere.
    """
    if n_points < order + accuracy + 1:
        raise ValueError("grid too small for the requested stencil")
    return _diff_matrix_cached(int(n_points), int(order), int(accuracy), float(h))

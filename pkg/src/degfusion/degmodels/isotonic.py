"""Pool-adjacent-violators for non-increasing least squares."""

from __future__ import annotations

import numpy as np


def pava_decreasing(y, w=None) -> np.ndarray:
    """Weighted non-increasing isotonic regression of ``y``.

    Returns the exact minimizer of ``sum w_i (theta_i - y_i)^2`` subject to
    ``theta_1 >= theta_2 >= ... >= theta_n``.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    # block stack: mean, weight, length
    means = np.empty(n)
    weights = np.empty(n)
    lengths = np.empty(n, dtype=int)
    top = -1
    for i in range(n):
        top += 1
        means[top], weights[top], lengths[top] = y[i], w[i], 1
        while top > 0 and means[top - 1] < means[top]:
            wsum = weights[top - 1] + weights[top]
            means[top - 1] = (weights[top - 1] * means[top - 1] + weights[top] * means[top]) / wsum
            weights[top - 1] = wsum
            lengths[top - 1] += lengths[top]
            top -= 1
    return np.repeat(means[: top + 1], lengths[: top + 1])


def merge_duplicates(x, y):
    """Sort by ``x`` and average ``y`` over repeated abscissae.

    Returns ``(x_unique, y_mean, counts)``; counts serve as least-squares
    weights so that the merged problem has the same minimizer.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    xu, start, counts = np.unique(xs, return_index=True, return_counts=True)
    sums = np.add.reduceat(ys, start) if xs.size else np.zeros(0)
    return xu, sums / counts, counts.astype(float)

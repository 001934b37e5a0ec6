"""Prediction-quality metrics: MAPE, RMSE and Kendall rank correlations.

Kendall's tau comes in two flavours here: ``tau_a`` ignores ties in the
denominator, ``tau_b`` corrects for them.  Both are available through a
brute-force O(n^2) pair enumeration and a merge-sort O(n log n) path; the
two paths produce identical pair counts and therefore bit-identical
results.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "MetricError",
    "mape",
    "rmse",
    "kendall_tau_a",
    "kendall_tau_b",
    "pair_counts",
    "pair_counts_bruteforce",
]


class MetricError(ValueError):
    """Raised when metric preconditions are violated."""


def _as_pairs(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    if yt.ndim != 1 or yp.ndim != 1:
        raise MetricError("inputs must be 1-D sequences")
    if yt.shape != yp.shape:
        raise MetricError(f"length mismatch: {yt.shape[0]} vs {yp.shape[0]}")
    if yt.shape[0] < 2:
        raise MetricError("at least 2 observations are required")
    if not np.all(np.isfinite(yt)):
        raise MetricError("true values must be finite")
    return yt, yp


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error, in percent.

    Uses ``|y_i|`` in the denominator; zero true values are rejected because
    the metric is unstable when true values approach zero.
    """
    yt, yp = _as_pairs(y_true, y_pred)
    if np.any(yt == 0.0):
        raise MetricError("MAPE is undefined for zero true values")
    return float(np.mean(np.abs((yp - yt) / np.abs(yt)))) * 100.0


def rmse(y_true, y_pred) -> float:
    """Root mean squared error."""
    yt, yp = _as_pairs(y_true, y_pred)
    return float(math.sqrt(np.mean((yp - yt) ** 2)))


def pair_counts_bruteforce(y_true, y_pred) -> tuple[int, int, int, int, int]:
    """Enumerate all unordered index pairs and classify them.

    Returns ``(n0, concordant, discordant, ties_true, ties_pred)`` where
    ``n0 = n(n-1)/2`` and the tie counts include pairs tied in both lists.
    Quadratic in n; used as the reference path.
    """
    yt, yp = _as_pairs(y_true, y_pred)
    n = yt.shape[0]
    st = np.sign(yt[:, None] - yt[None, :])
    sp = np.sign(yp[:, None] - yp[None, :])
    upper = np.triu_indices(n, k=1)
    st = st[upper]
    sp = sp[upper]
    n0 = n * (n - 1) // 2
    concordant = int(np.count_nonzero(st * sp > 0))
    discordant = int(np.count_nonzero(st * sp < 0))
    ties_true = int(np.count_nonzero(st == 0))
    ties_pred = int(np.count_nonzero(sp == 0))
    return n0, concordant, discordant, ties_true, ties_pred


def _merge_count(values: list[float]) -> int:
    """Count strict inversions in ``values`` via bottom-up merge sort."""
    n = len(values)
    arr = values
    buf = [0.0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            if mid >= hi:
                continue
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if arr[j] < arr[i]:
                    buf[k] = arr[j]
                    inversions += mid - i
                    j += 1
                else:
                    buf[k] = arr[i]
                    i += 1
                k += 1
            buf[k : k + mid - i] = arr[i:mid]
            k += mid - i
            buf[k : k + hi - j] = arr[j:hi]
            arr[lo:hi] = buf[lo:hi]
        width *= 2
    return inversions


def _tied_pairs(sorted_vals) -> int:
    total = 0
    run = 1
    for i in range(1, len(sorted_vals)):
        if sorted_vals[i] == sorted_vals[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


def pair_counts(y_true, y_pred) -> tuple[int, int, int, int, int]:
    """Same counts as :func:`pair_counts_bruteforce` in O(n log n).

    Knight's algorithm: sort by (true, pred), count pred inversions by merge
    sort, and derive the concordant count from the tie totals.
    """
    yt, yp = _as_pairs(y_true, y_pred)
    n = yt.shape[0]
    n0 = n * (n - 1) // 2

    order = np.lexsort((yp, yt))
    ts = yt[order]
    ps = yp[order]

    ties_true = _tied_pairs(ts.tolist())
    ties_pred = _tied_pairs(np.sort(yp).tolist())

    # pairs tied in both lists: group by (true, pred)
    both = 0
    run = 1
    for i in range(1, n):
        if ts[i] == ts[i - 1] and ps[i] == ps[i - 1]:
            run += 1
        else:
            both += run * (run - 1) // 2
            run = 1
    both += run * (run - 1) // 2

    discordant = _merge_count(ps.tolist())
    concordant = n0 - ties_true - ties_pred + both - discordant
    return n0, concordant, discordant, ties_true, ties_pred


def _tau_from_counts(counts: tuple[int, int, int, int, int]) -> tuple[float, float]:
    n0, nc, nd, tt, tp = counts
    tau_a = (nc - nd) / n0
    denom_sq = (n0 - tp) * (n0 - tt)
    if denom_sq == 0:
        if tt == n0 and tp == n0:
            return tau_a, math.nan
        # one list fully tied (or every pair tied in one of the lists):
        # the numerator is necessarily zero -> uninformative, report 0
        return tau_a, 0.0
    return tau_a, (nc - nd) / math.sqrt(denom_sq)


def kendall_tau_a(y_true, y_pred, method: str = "fast") -> float:
    """Kendall's tau-a: (concordant - discordant) / (n(n-1)/2)."""
    counts = _counts(y_true, y_pred, method)
    return _tau_from_counts(counts)[0]


def kendall_tau_b(y_true, y_pred, method: str = "fast") -> float:
    """Kendall's tau-b, with the tie-corrected denominator.

    Returns NaN when both lists are entirely tied (the statistic is
    undefined there) and 0.0 when exactly one list is fully tied.
    """
    counts = _counts(y_true, y_pred, method)
    return _tau_from_counts(counts)[1]


def _counts(y_true, y_pred, method: str) -> tuple[int, int, int, int, int]:
    if method == "fast":
        return pair_counts(y_true, y_pred)
    if method == "brute":
        return pair_counts_bruteforce(y_true, y_pred)
    raise MetricError(f"unknown method {method!r}")

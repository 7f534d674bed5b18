"""Wilcoxon signed-rank test."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

from ..errors import LengthMismatch

EXACT_MAX_N = 10


def _exact_p(doubled_ranks: np.ndarray, w_doubled: int) -> float:
    """Two-sided exact p from the null distribution of W+ over all sign flips.

    Ranks are doubled so tied (half-integer) ranks stay integral. The
    distribution of W+ is built by convolving the count polynomial one rank
    at a time; ``min(W+, W-) <= W`` is then counted directly.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    wplus = np.arange(total + 1)
    hit = np.minimum(wplus, total - wplus) <= w_doubled
    return float(counts[hit].sum()) / float(2 ** len(doubled_ranks))


def wilcoxon_signed_rank(a, b, exact_max_n: int = EXACT_MAX_N) -> dict:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped and tied magnitudes share average ranks.
    ``W = min(W+, W-)``. For up to ``exact_max_n`` non-zero pairs the p-value
    is exact; above that a normal approximation with tie and continuity
    corrections is used. With no non-zero pairs ``p = 1``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise LengthMismatch("samples differ in length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return {"W": 0.0, "p": 1.0, "n": 0, "method": "exact"}
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= exact_max_n:
        p = _exact_p(np.rint(2 * ranks).astype(np.int64), int(round(2 * w)))
        return {"W": w, "p": min(1.0, p), "n": n, "method": "exact"}

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    diff = w - mean
    if diff != 0:
        diff -= 0.5 * math.copysign(1.0, diff)
    z = diff / math.sqrt(var)
    p = 2.0 * norm.cdf(-abs(z))
    return {"W": w, "p": min(1.0, float(p)), "n": n, "method": "normal"}

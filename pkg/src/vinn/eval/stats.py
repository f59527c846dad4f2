"""Two-sided Wilcoxon signed-rank test and Benjamini-Hochberg adjustment."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

EXACT_MAX_N = 20


@dataclass
class WilcoxonResult:
    w: float          # sum of ranks of positive differences
    p: float
    n: int            # non-zero differences used
    method: str       # exact | normal | degenerate


def _exact_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[t] = number of sign assignments whose positive doubled-rank sum is t."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon(d, exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """Zero differences are dropped; ties get midranks.

    Exact null distribution (ties included) for n <= ``exact_max_n``, otherwise
    the tie-corrected normal approximation without continuity correction.
    """
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    ranks = rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_counts(doubled)
        t = int(round(2 * w))
        total = 2 ** n
        lo = sum(counts[:t + 1])
        hi = sum(counts[t:])
        p = min(1.0, 2 * float(min(lo, hi)) / total)
        return WilcoxonResult(w, p, n, "exact")
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return WilcoxonResult(w, 1.0, n, "degenerate")
    z = (w - mean) / math.sqrt(var)
    return WilcoxonResult(w, min(1.0, math.erfc(abs(z) / math.sqrt(2))), n, "normal")


def benjamini_hochberg(p) -> np.ndarray:
    """Step-up adjusted p-values in the input order."""
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = adj
    return out


@dataclass
class StatRow:
    structure: int
    n: int
    w: float
    p_raw: float
    p_bh: float
    method: str
    median_diff: float


def paired_stats(a, b, metric: str = "dsc", min_pairs: int = 5) -> list:
    """Per-structure Wilcoxon of a - b over subjects, BH-corrected across structures."""
    def index(records):
        out = defaultdict(dict)
        for r in records:
            if r.subject in out[r.structure]:
                raise ValueError(f"duplicate record for subject {r.subject}, structure {r.structure}")
            out[r.structure][r.subject] = getattr(r, metric)
        return out

    ia, ib = index(a), index(b)
    if set(ia) != set(ib):
        raise ValueError(f"structures differ between the two record sets: {sorted(set(ia) ^ set(ib))}")
    rows = []
    for s in sorted(ia):
        if set(ia[s]) != set(ib[s]):
            raise ValueError(f"structure {s}: unpaired subjects {sorted(set(ia[s]) ^ set(ib[s]))}")
        subjects = sorted(ia[s])
        diffs = np.array([ia[s][k] - ib[s][k] for k in subjects])
        diffs = diffs[~np.isnan(diffs)]
        if diffs.size < min_pairs:
            raise ValueError(f"structure {s}: {diffs.size} pairs, need at least {min_pairs}")
        res = wilcoxon(diffs)
        rows.append(StatRow(s, res.n, res.w, res.p, float("nan"), res.method, float(np.median(diffs))))
    adj = benjamini_hochberg([r.p_raw for r in rows])
    for r, q in zip(rows, adj):
        r.p_bh = float(q)
    return rows

"""Nonparametric tests used by the session analytics: Wilcoxon signed-rank
(exact for small n, tie-corrected normal approximation otherwise) and
Kruskal-Wallis with tie correction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

EXACT_N_LIMIT = 25


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int | tuple[int, ...]
    tail: str
    method: str
    df: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p-value out of [0, 1]")

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n,
                "tail": self.tail, "method": self.method, "df": self.df}


def _midranks(values: np.ndarray) -> np.ndarray:
    return sstats.rankdata(values, method="average")


def _exact_wplus_tail_probs(ranks2: np.ndarray) -> np.ndarray:
    """Distribution of W+ over all 2^n sign assignments, using doubled ranks
    so tied midranks stay integral. Returns counts indexed by doubled sum."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(pairs, tail: str = "one") -> TestResult:
    """Signed-rank test on (before, after) pairs; W is the sum of ranks of
    positive differences (after - before). Zero differences are dropped.

    One-tailed tests the alternative "after > before". Exact distribution for
    n <= 25, tie-corrected normal approximation beyond.
    """
    if tail not in ("one", "two"):
        raise ValueError("tail must be 'one' or 'two'")
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("pairs must be a nonempty (n, 2) array of (before, after)")
    d = arr[:, 1] - arr[:, 0]
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    if n < 5:
        raise ValueError(f"need >= 5 nonzero differences, got {n}")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_N_LIMIT:
        ranks2 = np.rint(2.0 * ranks).astype(int)
        counts = _exact_wplus_tail_probs(ranks2)
        total = 2.0 ** n
        w2 = int(np.rint(2.0 * w_plus))
        p_ge = counts[w2:].sum() / total
        p_le = counts[:w2 + 1].sum() / total
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        sd = np.sqrt(var)
        p_ge = float(sstats.norm.sf((w_plus - mean) / sd))
        p_le = float(sstats.norm.cdf((w_plus - mean) / sd))
        method = "normal"

    if tail == "one":
        p = p_ge
    else:
        p = min(1.0, 2.0 * min(p_ge, p_le))
    return TestResult(statistic=w_plus, p_value=float(p), n=n, tail=tail, method=method)


def kruskal_wallis(groups) -> TestResult:
    """H statistic with tie correction; p from chi-squared with k-1 degrees
    of freedom. All-identical data gives H = 0, p = 1."""
    cleaned = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(cleaned) < 2:
        raise ValueError("need at least 2 groups")
    for i, g in enumerate(cleaned):
        if g.size == 0:
            raise ValueError(f"group {i} is empty")
    sizes = tuple(int(g.size) for g in cleaned)
    pooled = np.concatenate(cleaned)
    n_total = pooled.size
    ranks = _midranks(pooled)
    df = len(cleaned) - 1

    h = 0.0
    offset = 0
    for g in cleaned:
        r = ranks[offset:offset + g.size]
        h += r.sum() ** 2 / g.size
        offset += g.size
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)

    _, tie_counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - np.sum(tie_counts ** 3 - tie_counts) / (n_total ** 3 - n_total)
    if correction == 0.0:  # every value identical
        return TestResult(statistic=0.0, p_value=1.0, n=sizes, tail="two",
                          method="chi2", df=df)
    h /= correction
    h = max(h, 0.0)
    p = float(sstats.chi2.sf(h, df))
    return TestResult(statistic=float(h), p_value=p, n=sizes, tail="two",
                      method="chi2", df=df)

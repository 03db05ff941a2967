"""Small statistics toolkit for the experiment reports."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def proportion_se(successes: int, n: int) -> tuple[float, float]:
    if n == 0:
        return math.nan, math.nan
    p = successes / n
    return p, math.sqrt(p * (1 - p) / n)


def bootstrap(values, stat, B: int = 400, seed: int = 0, axis_len: int | None = None) -> np.ndarray:
    """Replicates of ``stat`` over rows resampled with replacement."""
    v = np.asarray(values)
    n = v.shape[0] if axis_len is None else axis_len
    rng = np.random.default_rng(seed)
    out = np.empty(B)
    for b in range(B):
        out[b] = stat(v[rng.integers(0, n, n)])
    return out


def bootstrap_se(values, stat, B: int = 400, seed: int = 0) -> float:
    reps = bootstrap(values, stat, B, seed)
    reps = reps[np.isfinite(reps)]
    return float(reps.std(ddof=1)) if reps.size > 1 else math.nan


def bootstrap_ci(values, stat, level: float = 0.95, B: int = 1000, seed: int = 0) -> tuple[float, float]:
    reps = bootstrap(values, stat, B, seed)
    reps = reps[np.isfinite(reps)]
    a = (1 - level) / 2
    return float(np.quantile(reps, a)), float(np.quantile(reps, 1 - a))


@dataclass(frozen=True)
class TrendTest:
    S: int
    p_increasing: float
    n: int

    def rejects(self, alpha: float = 0.05) -> bool:
        """Undefined tests (missing cells) count as rejections."""
        return not self.p_increasing >= alpha


def mann_kendall(values) -> TrendTest:
    """One-sided Mann-Kendall test against an increasing trend.

    The null distribution of S is enumerated exactly for n <= 8 and uses
    the tie-free normal approximation with continuity correction above.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        return TrendTest(0, 1.0, n)
    if not np.all(np.isfinite(v)):
        return TrendTest(0, math.nan, n)

    def score(x):
        d = np.sign(x[None, :] - x[:, None])
        return int(np.triu(d, 1).sum())

    S = score(v)
    if n <= 8:
        null = np.array([score(np.array(p, dtype=float)) for p in itertools.permutations(range(n))])
        p = float(np.mean(null >= S))
    else:
        var = n * (n - 1) * (2 * n + 5) / 18
        z = (S - math.copysign(1, S)) / math.sqrt(var) if S else 0.0
        p = 0.5 * math.erfc(z / math.sqrt(2))
    return TrendTest(S, p, n)


def increases_beyond(est, se, k: float = 2.0) -> list[tuple[int, int]]:
    """Pairs i < j with est[j] - est[i] above k combined standard errors."""
    out = []
    for i in range(len(est)):
        for j in range(i + 1, len(est)):
            s = math.hypot(se[i], se[j])
            if est[j] - est[i] > k * s:
                out.append((i, j))
    return out


def tv(a, b) -> float:
    """Half the L1 distance between two histograms (normalized here)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return 0.5 * float(np.abs(a / a.sum() - b / b.sum()).sum())


def histogram(values, lo: int, hi: int) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.int64), lo, hi)
    return np.bincount(v - lo, minlength=hi - lo + 1).astype(np.float64)


def lag1_stat(series: list[np.ndarray]) -> float:
    """Max |lag-1 correlation| over the columns of per-lineage feature rows."""
    a = [s[:-1] for s in series if len(s) > 1]
    b = [s[1:] for s in series if len(s) > 1]
    if not a:
        return 0.0
    A, Bm = np.concatenate(a), np.concatenate(b)
    out = 0.0
    for k in range(A.shape[1]):
        if A[:, k].std() == 0 or Bm[:, k].std() == 0:
            continue
        out = max(out, abs(float(np.corrcoef(A[:, k], Bm[:, k])[0, 1])))
    return out


def shuffle_independence(series: list[np.ndarray], B: int = 200, seed: int = 0) -> tuple[float, float]:
    """Permutation test of serial independence within lineages.

    Rows are pooled, shuffled and dealt back into the same lineage lengths.
    Returns (observed statistic, p-value).
    """
    obs = lag1_stat(series)
    lens = [len(s) for s in series]
    pool = np.concatenate(series)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(B):
        perm = pool[rng.permutation(len(pool))]
        parts = np.split(perm, np.cumsum(lens)[:-1])
        hits += lag1_stat(parts) >= obs
    return obs, (hits + 1) / (B + 1)


def loglog_slope(t, y) -> float:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])


def pool_inverse_variance(est, se) -> tuple[float, float]:
    est = np.asarray(est, dtype=float)
    se = np.asarray(se, dtype=float)
    w = 1.0 / se**2
    return float((w * est).sum() / w.sum()), float(1.0 / math.sqrt(w.sum()))

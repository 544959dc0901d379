"""Bootstrap confidence intervals, Wilcoxon signed-rank and DeLong tests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .errors import DegenerateDataError, InputError
from .metrics import _midranks


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

@dataclass
class BootstrapResult:
    point: float
    lo: float
    hi: float
    distribution: np.ndarray
    n: int
    seed: int
    redraws: int = 0

    def to_json(self) -> dict:
        return {"point": self.point, "ci_lo": self.lo, "ci_hi": self.hi, "n": self.n, "seed": self.seed}


def _iter_rng(seed: int, i: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, i, attempt]))


def bootstrap_indices(labels, iters: int, seed: int, require_both: bool = True) -> tuple[np.ndarray, int]:
    """Case resamples with replacement, one row per iteration.

    Resamples holding a single class are redrawn; more than ``10 * iters``
    draws in total is treated as degenerate input.
    """
    y = np.asarray(labels).astype(bool)
    n = len(y)
    if n < 2:
        raise InputError("bootstrap needs at least two cases")
    out = np.empty((iters, n), dtype=np.int64)
    draws = 0
    for i in range(iters):
        attempt = 0
        while True:
            draws += 1
            if draws > 10 * iters:
                raise DegenerateDataError("too many single-class bootstrap resamples")
            idx = _iter_rng(seed, i, attempt).integers(0, n, n)
            attempt += 1
            if not require_both or 0 < y[idx].sum() < n:
                break
        out[i] = idx
    return out, draws - iters


def bootstrap_ci(metric: Callable, scores, labels, iters: int = 1000, seed: int = 0,
                 require_both: bool = True) -> BootstrapResult:
    """Percentile interval (2.5, 97.5) of ``metric(scores, labels)``."""
    s = np.asarray(scores)
    y = np.asarray(labels)
    idx, redraws = bootstrap_indices(y, iters, seed, require_both)
    dist = np.array([metric(s[i], y[i]) for i in idx], dtype=np.float64)
    lo, hi = np.percentile(dist, [2.5, 97.5])
    return BootstrapResult(float(metric(s, y)), float(lo), float(hi), dist, len(y), seed, redraws)


def paired_bootstrap(metric: Callable, score_sets, labels, iters: int = 1000, seed: int = 0):
    """Bootstrap several methods on the same resampled cases.

    Returns one :class:`BootstrapResult` per entry of ``score_sets``.
    """
    y = np.asarray(labels)
    idx, redraws = bootstrap_indices(y, iters, seed)
    out = []
    for scores in score_sets:
        s = np.asarray(scores)
        dist = np.array([metric(s[i], y[i]) for i in idx], dtype=np.float64)
        lo, hi = np.percentile(dist, [2.5, 97.5])
        out.append(BootstrapResult(float(metric(s, y)), float(lo), float(hi), dist, len(y), seed, redraws))
    return out


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank
# ---------------------------------------------------------------------------

EXACT_MAX_N = 25


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str
    n: int
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d


def _exact_lower_tail(doubled_ranks: np.ndarray, t2: int) -> float:
    """P(W+ <= t) under random signs; ranks and ``t2`` are doubled to stay integral."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[int(r):] = counts[: total + 1 - int(r)]
        counts = counts + shifted
    return float(counts[: t2 + 1].sum() / 2.0 ** len(doubled_ranks))


def wilcoxon_signed_rank(x, y=None, exact_max_n: int = EXACT_MAX_N) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped.  The statistic is ``min(W+, W-)``.  Up to
    ``exact_max_n`` pairs the p-value comes from the exact permutation
    distribution of the (mid)ranks; above that a normal approximation with
    tie and continuity corrections is used.
    """
    d = np.asarray(x, dtype=np.float64)
    if y is not None:
        d = d - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return TestResult(0.0, 1.0, "degenerate", 0, degenerate=True)
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    t = min(w_plus, w_minus)
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = min(1.0, 2.0 * _exact_lower_tail(doubled, int(round(2 * t))))
        return TestResult(t, p, "exact", n, extra={"w_plus": w_plus, "w_minus": w_minus})
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return TestResult(t, 1.0, "normal", n, degenerate=True)
    z = (t - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return TestResult(t, p, "normal", n, extra={"w_plus": w_plus, "w_minus": w_minus, "z": z})


# ---------------------------------------------------------------------------
# DeLong
# ---------------------------------------------------------------------------

def structural_components(scores, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """AUC and its placement values via midranks (fast DeLong)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    m, n = len(pos), len(neg)
    if m == 0 or n == 0:
        raise DegenerateDataError("DeLong needs both classes")
    r_all = _midranks(np.concatenate([pos, neg]))
    r_pos = _midranks(pos)
    r_neg = _midranks(neg)
    v10 = (r_all[:m] - r_pos) / n
    v01 = 1.0 - (r_all[m:] - r_neg) / m
    auc = float(v10.mean())
    return auc, v10, v01


def delong_covariance(score_sets, labels) -> tuple[np.ndarray, np.ndarray]:
    """AUCs and their covariance matrix for paired score vectors."""
    y = np.asarray(labels).astype(bool)
    aucs, v10s, v01s = [], [], []
    for s in score_sets:
        a, v10, v01 = structural_components(s, y)
        aucs.append(a)
        v10s.append(v10)
        v01s.append(v01)
    m, n = int(y.sum()), int((~y).sum())
    s10 = np.atleast_2d(np.cov(np.array(v10s), ddof=1)) if m > 1 else np.zeros((len(aucs),) * 2)
    s01 = np.atleast_2d(np.cov(np.array(v01s), ddof=1)) if n > 1 else np.zeros((len(aucs),) * 2)
    return np.array(aucs), s10 / m + s01 / n


def delong_test(scores_a, scores_b, labels) -> TestResult:
    """Two-sided DeLong test for the difference of two correlated AUCs."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError("paired score vectors must have equal length")
    aucs, cov = delong_covariance([a, b], labels)
    var = float(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1])
    diff = float(aucs[0] - aucs[1])
    extra = {"auc_a": float(aucs[0]), "auc_b": float(aucs[1]), "variance": var}
    if var <= 1e-15:
        return TestResult(0.0, 1.0, "delong", len(a), degenerate=True, extra=extra)
    z = diff / math.sqrt(var)
    p = float(2.0 * norm.sf(abs(z)))
    return TestResult(z, p, "delong", len(a), extra=extra)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")

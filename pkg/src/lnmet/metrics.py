"""Voxel-wise, instance-wise and patient-level classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, InputError


def _ratio(num: float, den: float, both_empty: bool) -> float:
    if den > 0:
        return num / den
    return 1.0 if both_empty else 0.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InputError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, pred, truth) -> "ConfusionCounts":
        p = np.asarray(pred, dtype=bool)
        t = np.asarray(truth, dtype=bool)
        if p.shape != t.shape:
            raise InputError(f"prediction shape {p.shape} != truth shape {t.shape}")
        return cls(int((p & t).sum()), int((p & ~t).sum()), int((~p & ~t).sum()), int((~p & t).sum()))

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else float("nan")

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else float("nan")


# ---------------------------------------------------------------------------
# voxel and instance metrics
# ---------------------------------------------------------------------------

def voxel_metrics(pred, gt) -> dict[str, float]:
    """Dice, recall and precision of two binary masks.

    Both masks empty counts as a perfect result; any other zero denominator
    gives 0.
    """
    p = np.asarray(getattr(pred, "data", pred)) > 0
    g = np.asarray(getattr(gt, "data", gt)) > 0
    if p.shape != g.shape:
        raise InputError(f"mask shapes differ: {p.shape} vs {g.shape}")
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    empty = tp + fp + fn == 0
    return {
        "dice": _ratio(2 * tp, 2 * tp + fp + fn, empty),
        "recall": _ratio(tp, tp + fn, empty),
        "precision": _ratio(tp, tp + fp, empty),
    }


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)
    n_pred: int = 0
    n_gt: int = 0


def _voxel_keys(inst) -> set:
    vox = getattr(inst, "voxels", inst)
    return {tuple(int(c) for c in v) for v in np.asarray(vox).reshape(-1, 3)}


def iou_matrix(pred, gt) -> np.ndarray:
    ps = [_voxel_keys(p) for p in pred]
    gs = [_voxel_keys(g) for g in gt]
    out = np.zeros((len(ps), len(gs)))
    for i, a in enumerate(ps):
        for j, b in enumerate(gs):
            inter = len(a & b)
            if inter:
                out[i, j] = inter / (len(a) + len(b) - inter)
    return out


def match_from_iou(iou: np.ndarray, iou_thresh: float = 0.30) -> MatchResult:
    n_pred, n_gt = iou.shape
    cand = [(-iou[i, j], i, j) for i in range(n_pred) for j in range(n_gt) if iou[i, j] >= iou_thresh]
    cand.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, i, j in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg))
    return MatchResult(
        pairs=pairs,
        unmatched_pred=[i for i in range(n_pred) if i not in used_p],
        unmatched_gt=[j for j in range(n_gt) if j not in used_g],
        n_pred=n_pred,
        n_gt=n_gt,
    )


def match_instances(pred, gt, iou_thresh: float = 0.30) -> MatchResult:
    """Greedy one-to-one matching by descending IoU.

    Ties go to the lower (pred index, gt index).  A pair needs IoU of at
    least ``iou_thresh``.  Indices refer to positions in the input lists.
    """
    return match_from_iou(iou_matrix(pred, gt), iou_thresh)


def instance_metrics(m: MatchResult) -> dict[str, float]:
    k = len(m.pairs)
    empty = m.n_pred == 0 and m.n_gt == 0
    recall = _ratio(k, m.n_gt, empty)
    precision = _ratio(k, m.n_pred, empty)
    f = _ratio(2 * recall * precision, recall + precision, empty)
    return {"f_measure": f, "recall": recall, "precision": precision}


def pooled_instance_metrics(results: list[MatchResult]) -> dict[str, float]:
    pooled = MatchResult(
        pairs=[p for r in results for p in r.pairs],
        n_pred=sum(r.n_pred for r in results),
        n_gt=sum(r.n_gt for r in results),
    )
    return instance_metrics(pooled)


def average_metrics(rows: list[dict[str, float]]) -> dict[str, float]:
    if not rows:
        return {}
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


# ---------------------------------------------------------------------------
# patient-level classification
# ---------------------------------------------------------------------------

def balanced_accuracy(sensitivity: float, specificity: float) -> float:
    return 0.5 * (sensitivity + specificity)


def classification_metrics(scores, labels, threshold: float = 0.5) -> dict[str, float]:
    """Accuracy, balanced accuracy, sensitivity and specificity at
    ``score >= threshold``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise InputError("scores and labels must align")
    c = ConfusionCounts.from_predictions(s >= threshold, y)
    return metrics_from_counts(c)


def metrics_from_counts(c: ConfusionCounts) -> dict[str, float]:
    n = c.tp + c.fp + c.tn + c.fn
    sens, spec = c.sensitivity, c.specificity
    return {
        "accuracy": (c.tp + c.tn) / n if n else float("nan"),
        "balanced_accuracy": balanced_accuracy(sens, spec),
        "sensitivity": sens,
        "specificity": spec,
    }


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        ranks[i:j] = 0.5 * (i + j - 1) + 1
        i = j
    out = np.empty(n)
    out[order] = ranks
    return out


def _split_classes(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be aligned 1-D arrays")
    if y.all() or not y.any():
        raise DegenerateDataError("AUC needs at least one positive and one negative case")
    return s[y], s[~y]


def auc_rank(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    pos, neg = _split_classes(scores, labels)
    r = _midranks(np.concatenate([pos, neg]))[: len(pos)]
    m = len(pos)
    return float((r.sum() - m * (m + 1) / 2) / (m * len(neg)))


def roc_auc(scores, labels) -> RocCurve:
    pos, neg = _split_classes(scores, labels)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    thr = np.unique(s)[::-1]
    tpr = [0.0] + [float((pos >= t).mean()) for t in thr]
    fpr = [0.0] + [float((neg >= t).mean()) for t in thr]
    return RocCurve(np.array(fpr), np.array(tpr), np.concatenate([[np.inf], thr]), auc_rank(s, y))

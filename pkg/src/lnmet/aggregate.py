"""Patient-level metastasis calls from the largest positive LN volume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import DegenerateDataError, InputError
from .instances import POSITIVE
from .metrics import ConfusionCounts, metrics_from_counts


@dataclass
class PatientRecord:
    """Per-patient inputs and predictions.

    ``gt_instances`` carry GT classes; ``pred_instances`` carry identifier
    predictions.  Either list may hold :class:`LNInstance` objects or plain
    dicts with ``volume_mm3``, ``gt_label`` and ``pred_label`` keys.
    """

    patient_id: str
    gt_instances: list = field(default_factory=list)
    pred_instances: list = field(default_factory=list)
    gt_metastasis: bool | None = None
    split: str = "train"

    def __post_init__(self):
        derived = any(_get(i, "gt_label") == POSITIVE for i in self.gt_instances)
        if self.gt_metastasis is None:
            self.gt_metastasis = derived
        elif self.gt_instances and bool(self.gt_metastasis) != derived:
            raise InputError(f"{self.patient_id}: metastasis label disagrees with its GT LN labels")


def _get(inst, key):
    return inst[key] if isinstance(inst, dict) else getattr(inst, key)


def max_pos_volume(p: PatientRecord, source: Literal["gt", "predicted"] = "predicted") -> float:
    """Largest positive LN volume (mm^3) of a patient, 0 when there is none."""
    if source == "gt":
        items, key = p.gt_instances, "gt_label"
    elif source == "predicted":
        items, key = p.pred_instances, "pred_label"
    else:
        raise InputError(f"unknown volume source {source!r}")
    vols = [float(_get(i, "volume_mm3")) for i in items if _get(i, key) == POSITIVE]
    return max(vols, default=0.0)


@dataclass(frozen=True)
class ThresholdChoice:
    tau: float
    balanced_accuracy: float
    direction: Literal["greater", "less"]


def _candidates(values: np.ndarray) -> np.ndarray:
    distinct = np.unique(values)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    extra = [math.inf]
    if distinct[0] > 0:
        extra.append(0.0)
    return np.unique(np.concatenate([mids, extra]))


def _ba(pred: np.ndarray, truth: np.ndarray) -> float:
    return metrics_from_counts(ConfusionCounts.from_predictions(pred, truth))["balanced_accuracy"]


def select_threshold(values, labels) -> ThresholdChoice:
    """Exhaustive search of the cut maximising balanced accuracy.

    Candidates are midpoints between sorted distinct values, ``+inf`` and,
    when every value is positive, 0.  The forward rule calls positive iff
    ``value > tau``; the reversed rule (``value <= tau``) is also scored and
    wins only if strictly better.  Ties go to the smallest tau.
    """
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if v.shape != y.shape or v.ndim != 1:
        raise InputError("values and labels must be aligned 1-D arrays")
    if y.all() or not y.any():
        raise DegenerateDataError("threshold selection needs both classes in the validation set")
    best = {}
    for direction in ("greater", "less"):
        top = (-1.0, math.inf)
        for tau in _candidates(v):
            pred = v > tau if direction == "greater" else v <= tau
            ba = _ba(pred, y)
            if ba > top[0] + 1e-12:
                top = (ba, tau)
        best[direction] = top
    direction = "less" if best["less"][0] > best["greater"][0] + 1e-12 else "greater"
    ba, tau = best[direction]
    return ThresholdChoice(float(tau), float(ba), direction)


def select_volume_threshold(val_records: list[PatientRecord], source: str = "predicted") -> ThresholdChoice:
    vols = [max_pos_volume(r, source) for r in val_records]
    return select_threshold(vols, [bool(r.gt_metastasis) for r in val_records])


def aggregate_by_threshold(records: list[PatientRecord], tau: float, source: str = "predicted",
                           direction: str = "greater") -> dict[str, bool]:
    """Metastasis-positive iff the largest positive LN exceeds ``tau`` (strictly)."""
    if tau < 0:
        raise InputError("threshold must be >= 0")
    out = {}
    for r in records:
        v = max_pos_volume(r, source)
        out[r.patient_id] = v > tau if direction == "greater" else v <= tau
    return out

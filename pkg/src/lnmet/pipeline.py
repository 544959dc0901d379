"""Composable pipeline stages shared by the CLI and the end-to-end checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .aggregate import PatientRecord
from .distance import (STRUCTURES, TrapezoidParams, calibrate_params, fuse_attention, signed_distance,
                       trapezoid)
from .errors import InputError
from .fusion import extract_tumor_patches, fuse_and_classify
from .instances import POSITIVE, crop_instance, extract_instances, gt_instances, identify_instances
from .metrics import (ConfusionCounts, average_metrics, instance_metrics, match_instances,
                      metrics_from_counts, pooled_instance_metrics, voxel_metrics)
from .sampler import SampleCase

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def distance_stack(organs: np.ndarray, spacing, n: int = len(STRUCTURES)) -> np.ndarray:
    return np.stack([signed_distance(organs == i + 1, spacing)[0] for i in range(n)])


def calibrate_cases(cases, smooth: float = 3.0) -> dict[str, TrapezoidParams]:
    """Pool GT LN voxels of ``cases`` (objects with organs/ln_gt) into one calibration."""
    used = [c for c in cases if (c.ln_gt.data > 0).any()]
    if not used:
        return calibrate_params([], [], STRUCTURES, smooth)
    # distance stacks are built lazily, one case at a time
    masks = (c.ln_gt.data > 0 for c in used)
    dmaps = (distance_stack(c.organs.data, c.organs.spacing) for c in used)
    return calibrate_params(masks, dmaps, STRUCTURES, smooth)


def case_attention(case, params: dict[str, TrapezoidParams]) -> np.ndarray:
    organs = case.organs.data
    maps = []
    for i, name in enumerate(STRUCTURES):
        p = params[name]
        if not p.enabled:
            maps.append(np.zeros(organs.shape))
            continue
        d, _ = signed_distance(organs == i + 1, case.organs.spacing)
        maps.append(trapezoid(d, p))
    return fuse_attention(maps, organs).astype(np.float32)


def sample_case(case, attention: np.ndarray) -> SampleCase:
    lab = (case.ln_gt.data > 0).astype(np.uint8)
    return SampleCase(case.case_id, case.image, lab, attention)


# ---------------------------------------------------------------------------
# segmentation evaluation
# ---------------------------------------------------------------------------

@dataclass
class SegEval:
    per_case: dict = field(default_factory=dict)
    voxel_mean: dict = field(default_factory=dict)
    instance_mean: dict = field(default_factory=dict)
    instance_pooled: dict = field(default_factory=dict)
    fp_outside_attention: int = 0


def evaluate_segmentation(cases, preds: dict[str, np.ndarray], attention: dict[str, np.ndarray] | None = None,
                          iou_thresh: float = 0.30) -> SegEval:
    out = SegEval()
    vox_rows, inst_rows, matches = [], [], []
    for c in cases:
        pred = preds[c.case_id]
        gt = c.ln_gt.data > 0
        vm = voxel_metrics(pred, gt)
        p_inst = extract_instances(pred, c.spacing)
        g_inst = gt_instances(c.ln_gt.data, c.spacing)
        m = match_instances(p_inst, g_inst, iou_thresh)
        im = instance_metrics(m)
        fp_out = 0
        if attention is not None:
            fp_out = int(((pred > 0) & ~gt & (attention[c.case_id] <= 0)).sum())
        out.fp_outside_attention += fp_out
        out.per_case[c.case_id] = {**{f"voxel_{k}": v for k, v in vm.items()},
                                   **{f"instance_{k}": v for k, v in im.items()},
                                   "n_pred": m.n_pred, "n_gt": m.n_gt, "n_match": len(m.pairs),
                                   "fp_voxels_outside_attention": fp_out}
        vox_rows.append(vm)
        inst_rows.append(im)
        matches.append(m)
    out.voxel_mean = average_metrics(vox_rows)
    out.instance_mean = average_metrics(inst_rows)
    out.instance_pooled = pooled_instance_metrics(matches)
    return out


# ---------------------------------------------------------------------------
# identification and patient records
# ---------------------------------------------------------------------------

def identifier_training_set(cases, crop_shape) -> tuple[np.ndarray, np.ndarray]:
    crops, labels = [], []
    for c in cases:
        img = c.image
        for inst in gt_instances(c.ln_gt.data, c.spacing):
            crops.append(crop_instance(img, inst, crop_shape))
            labels.append(inst.gt_label == POSITIVE)
    if not crops:
        raise InputError("no GT instances to train the identifier on")
    return np.stack(crops), np.array(labels)


def patient_records(cases, preds: dict[str, np.ndarray] | None, clf, crop_shape, split: str,
                    threshold: float = 0.5) -> list[PatientRecord]:
    recs = []
    for c in cases:
        gts = gt_instances(c.ln_gt.data, c.spacing)
        pred_inst = []
        if preds is not None:
            inst = extract_instances(preds[c.case_id], c.spacing, gt=c.ln_gt.data)
            pred_inst = identify_instances(clf, c.image, inst, crop_shape, threshold)
        recs.append(PatientRecord(c.case_id, gts, pred_inst, c.metastasis, split))
    return recs


def balanced_accuracy_of(pred: dict[str, bool], truth: dict[str, bool]) -> dict:
    ids = sorted(truth)
    c = ConfusionCounts.from_predictions([pred[i] for i in ids], [truth[i] for i in ids])
    return metrics_from_counts(c)


def tumor_patch_stack(cases, size: int):
    imgs, masks = [], []
    for c in cases:
        tp = extract_tumor_patches(c.image, c.tumor.data, size)
        imgs.append(tp.images)
        masks.append(tp.masks)
    return np.stack(imgs), np.stack(masks)


def fusion_scores(head, imgs, masks, vmax=None) -> np.ndarray:
    out = []
    for i in range(len(imgs)):
        prob, _ = fuse_and_classify(head, imgs[i], masks[i], None if vmax is None else vmax[i])
        out.append(prob)
    return np.array(out)

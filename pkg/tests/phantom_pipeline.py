"""Full phantom pipeline used by the end-to-end acceptance checks.

Generates a cohort, calibrates attention on the training split, trains the
segmentation net with and without attention, runs LN identification and both
patient-level predictors, and returns every number the checks need.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from lnmet.aggregate import aggregate_by_threshold, max_pos_volume, select_threshold
from lnmet.fusion import FusionConfig, train_fusion
from lnmet.instances import IdentifierConfig, train_identifier
from lnmet.metrics import classification_metrics
from lnmet.phantom import PhantomConfig, generate_cohort
from lnmet.pipeline import (calibrate_cases, case_attention, evaluate_segmentation, fusion_scores,
                            identifier_training_set, patient_records, sample_case, tumor_patch_stack)
from lnmet.sampler import SamplerConfig
from lnmet.splits import nested_cv_split
from lnmet.train import TrainConfig, infer_segmentation, train_micronet


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomConfig = PhantomConfig(n_cases=100, seed=7)
    split_seed: int = 7
    fold: int = 0
    train: TrainConfig = TrainConfig(steps=800, lr=0.03, loss_form="standard",
                                     sampler=SamplerConfig(patch_shape=(32, 32, 32), batch_size=4))
    identify: IdentifierConfig = IdentifierConfig(crop_shape=(16, 16, 16), epochs=30)
    fusion: FusionConfig = FusionConfig(patch_size=32, k=8, epochs=40)
    # GT-derived v_max is positive exactly for positive patients, so training on it teaches the label
    train_vmax: str = "predicted"
    seed: int = 1


@dataclass
class PipelineResult:
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0
    segmentation: dict = field(default_factory=dict)
    aggregation: dict = field(default_factory=dict)
    fusion: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


def _ba(pred, truth) -> float:
    return classification_metrics([float(p) for p in pred], truth, 0.5)["balanced_accuracy"]


def _call(scores, choice):
    s = np.asarray(scores)
    return s > choice.tau if choice.direction == "greater" else s <= choice.tau


def run_pipeline(cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    res = PipelineResult()
    t0 = time.perf_counter()

    def lap(name):
        res.seconds[name] = time.perf_counter() - t0

    cases = generate_cohort(cfg.phantom)
    by_id = {c.case_id: c for c in cases}
    fold = nested_cv_split(list(by_id), [c.metastasis for c in cases], seed=cfg.split_seed).folds[cfg.fold]
    train, val, test = ([by_id[i] for i in ids] for ids in (fold.train, fold.val, fold.test))
    res.n_train, res.n_val, res.n_test = len(train), len(val), len(test)
    lap("phantom")

    params = calibrate_cases(train)
    attention = {c.case_id: case_attention(c, params) for c in cases}
    lap("attention")

    nets, preds = {}, {}
    for use_att in (True, False):
        key = "on" if use_att else "off"
        sc = [sample_case(c, attention[c.case_id]) for c in train]
        nets[key], _ = train_micronet(sc, cfg.train, use_attention=use_att, seed=cfg.seed)
        scored = train + val + test if use_att else val + test
        preds[key] = {c.case_id: infer_segmentation(nets[key], c.image, attention[c.case_id] if use_att else None)
                      for c in scored}
        ev = evaluate_segmentation(test, preds[key], attention)
        res.segmentation[key] = {"voxel": ev.voxel_mean, "instance": ev.instance_pooled,
                                 "instance_per_case": ev.instance_mean,
                                 "fp_voxels_outside_attention": ev.fp_outside_attention}
        lap(f"segment_{key}")

    # stage 2 on the attention-on segmentation
    crops, labels = identifier_training_set(train, cfg.identify.crop_shape)
    clf, _ = train_identifier(crops, labels, nets["on"], cfg.identify, cfg.seed)
    records = {name: patient_records(subset, preds["on"], clf, cfg.identify.crop_shape, name,
                                     cfg.identify.threshold)
               for name, subset in (("train", train), ("val", val), ("test", test))}
    truth = {k: [bool(r.gt_metastasis) for r in v] for k, v in records.items()}
    lap("identify")

    vol = {k: [max_pos_volume(r, "predicted") for r in records[k]] for k in ("val", "test")}
    choice = select_threshold(vol["val"], truth["val"])
    agg = aggregate_by_threshold(records["test"], choice.tau, "predicted", choice.direction)
    res.aggregation = {"tau": choice.tau, "direction": choice.direction, "val_ba": choice.balanced_accuracy,
                       "test_ba": _ba([agg[r.patient_id] for r in records["test"]], truth["test"])}
    lap("aggregate")

    patches = {k: tumor_patch_stack(s, cfg.fusion.patch_size) for k, s in (("train", train), ("val", val),
                                                                          ("test", test))}
    train_vmax = np.array([max_pos_volume(r, cfg.train_vmax) for r in records["train"]], dtype=np.float32)
    infer_vmax = {k: np.array(vol[k], dtype=np.float32) for k in ("val", "test")}
    heads = {
        "tumor_only": train_fusion(*patches["train"], truth["train"], None, cfg.fusion, cfg.seed)[0],
        "combined": train_fusion(*patches["train"], truth["train"], train_vmax, cfg.fusion, cfg.seed)[0],
    }
    for name, head in heads.items():
        vm = (lambda k: infer_vmax[k]) if name == "combined" else (lambda k: None)
        s_val = fusion_scores(head, *patches["val"], vm("val"))
        s_test = fusion_scores(head, *patches["test"], vm("test"))
        op = select_threshold(s_val, truth["val"])
        res.fusion[name] = {"operating_point": op.tau, "val_ba": op.balanced_accuracy,
                            "test_ba": _ba(_call(s_test, op), truth["test"])}
    res.fusion["volume_only"] = {"test_ba": res.aggregation["test_ba"]}
    res.fusion["_heads"] = heads
    res.fusion["_test_patches"] = patches["test"]
    res.fusion["_test_vmax"] = infer_vmax["test"]
    lap("fusion")
    res.seconds["total"] = time.perf_counter() - t0
    return res

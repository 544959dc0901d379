"""``lnmet`` command line: one subcommand per pipeline stage.

Every invocation writes into its own run directory (``--out``): the fully
resolved ``config.yaml``, ``run.json`` with the command, inputs and their
content hashes, and the stage outputs.  ``lnmet rerun RUN --out NEW``
replays a run from those files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .aggregate import PatientRecord, aggregate_by_threshold, max_pos_volume, select_threshold
from .config import dump_config, load_config, tree_sha256
from .distance import default_params_path, load_params, save_params
from .errors import ConfigError, InputError, LnmetError
from .fusion import FusionConfig, FusionHead, train_fusion, write_prediction_csv, fuse_and_classify
from .instances import (NEGATIVE, POSITIVE, IdentifierConfig, InstanceClassifier, class_aware_mask,
                        extract_instances, identify_instances, read_instance_csv, train_identifier,
                        write_instance_csv)
from .io import load_mvol, save_mvol
from .metrics import auc_rank, classification_metrics
from .net import load_checkpoint, load_micronet, save_checkpoint
from .phantom import PhantomConfig, generate_cohort, read_cohort, write_cohort
from .pipeline import (calibrate_cases, case_attention, evaluate_segmentation, identifier_training_set,
                       sample_case, tumor_patch_stack)
from .sampler import SamplerConfig, sample_batch, write_provenance_csv
from .splits import SplitPlan, nested_cv_split
from .stats import bootstrap_ci, delong_test, dump_json, paired_bootstrap, wilcoxon_signed_rank
from .train import TrainConfig, infer_segmentation, train_micronet, write_trace_csv
from .volume import LabelVolume, ScalarVolume

log = logging.getLogger("lnmet")

# flags that name input files or directories, recorded and hashed per run
INPUT_FLAGS = ("cohort", "split_file", "params", "attention_dir", "checkpoint", "seg_dir", "identifier",
               "instances", "fusion", "predictions", "predictions_b")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _need(args, name):
    value = getattr(args, name, None)
    if value is None:
        raise InputError(f"--{name.replace('_', '-')} is required for '{args.command}'")
    if not Path(value).exists():
        raise InputError(f"input not found: {value}")
    return Path(value)


def _cohort(args):
    _, cases = read_cohort(_need(args, "cohort"))
    return cases


def _fold(args, cfg):
    if getattr(args, "split_file", None) is None:
        return None
    plan = SplitPlan.from_json(json.loads(_need(args, "split_file").read_text()))
    if cfg["fold"] >= len(plan.folds):
        raise ConfigError(f"fold {cfg['fold']} not in split with {len(plan.folds)} folds")
    return plan.folds[cfg["fold"]]


def _subset(cases, ids):
    by = {c.case_id: c for c in cases}
    missing = [i for i in ids if i not in by]
    if missing:
        raise InputError(f"split names cases missing from the cohort: {missing[:3]}")
    return [by[i] for i in ids]


def _train_cases(args, cfg, cases):
    fold = _fold(args, cfg)
    return cases if fold is None else _subset(cases, fold.train)


def _eval_cases(args, cfg, cases):
    fold = _fold(args, cfg)
    if fold is None or getattr(args, "cases", "eval") == "all":
        return cases
    return _subset(cases, fold.val + fold.test)


def _attention(args, case):
    d = getattr(args, "attention_dir", None)
    if d is None:
        return None
    p = Path(d) / f"{case.case_id}.mvol"
    if not p.exists():
        raise InputError(f"missing attention map {p}")
    return np.asarray(load_mvol(p).data, dtype=np.float32)


def _params(args, cfg):
    if getattr(args, "params", None) is not None:
        return load_params(_need(args, "params"))
    return load_params(default_params_path())


def _sampler_cfg(cfg):
    s = cfg["sampler"]
    return SamplerConfig(tuple(s["patch_shape"]), s["batch_size"], s["quota_rule"], cfg["seed"])


def _train_cfg(cfg):
    t = cfg["train"]
    return TrainConfig(t["steps"], t["lr"], t["momentum"], t["weight_decay"], t["loss_form"], t["alpha"],
                       t["beta"], tuple(t["channels"]), _sampler_cfg(cfg), poly_power=t["poly_power"])


def _load_classifier(path):
    header, state = load_checkpoint(path)
    if header["arch"] != "InstanceClassifier":
        raise InputError(f"{path}: not an identifier checkpoint")
    c = header["config"]
    clf = InstanceClassifier(c["in_channels"], tuple(c["channels"]))
    clf.load_state_dict(state)
    clf.eval()
    return clf


def _load_fusion(path):
    header, state = load_checkpoint(path)
    if header["arch"] != "FusionHead":
        raise InputError(f"{path}: not a fusion checkpoint")
    c = header["config"]
    head = FusionHead(c["in_channels"], tuple(c["widths"]), c["k"], c["use_volume"])
    head.load_state_dict(state)
    head.eval()
    return head, header["meta"]


def _records(args, cases, split_name):
    """Patient records from an instance table (predicted) and GT volumes."""
    table = read_instance_csv(_need(args, "instances")) if getattr(args, "instances", None) else {}
    from .instances import gt_instances
    recs = []
    for c in cases:
        recs.append(PatientRecord(c.case_id, gt_instances(c.ln_gt.data, c.spacing),
                                  table.get(c.case_id, []), c.metastasis, split_name))
    return recs


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_phantom(args, cfg, out):
    p = cfg["phantom"]
    pc = PhantomConfig(dims=tuple(p["dims"]), spacing=tuple(p["spacing"]), n_cases=p["n_cases"],
                       positive_rate=p["positive_rate"], seed=cfg["seed"])
    cases = generate_cohort(pc, threads=cfg["threads"])
    manifest = write_cohort(out / "cohort", cases, pc)
    dump_json(out / "phantom_report.json", {
        "n_cases": manifest["n_cases"], "inputs_sha256": manifest["inputs_sha256"],
        "positive_fraction": float(np.mean([c.metastasis for c in cases])),
        "n_positive_ln": sum(l["label"] == POSITIVE for c in cases for l in c.lns),
        "n_negative_ln": sum(l["label"] == NEGATIVE for c in cases for l in c.lns),
    })


def cmd_split(args, cfg, out):
    cases = _cohort(args)
    s = cfg["split"]
    plan = nested_cv_split([c.case_id for c in cases], [c.metastasis for c in cases], s["k"], cfg["seed"],
                           s["stratified"], s["val_fraction"])
    plan.save(out / "split.json")
    _write_csv(out / "split_sizes.csv", ["fold", "train", "val", "test", "test_positive"],
               [[i, len(f.train), len(f.val), len(f.test),
                 sum(c.metastasis for c in _subset(cases, f.test))] for i, f in enumerate(plan.folds)])


def cmd_calibrate(args, cfg, out):
    cases = _train_cases(args, cfg, _cohort(args))
    params = calibrate_cases(cases, cfg["attention"]["smooth"])
    save_params(out / "params.tsv", params)


def cmd_attention(args, cfg, out):
    cases = _cohort(args)
    params = _params(args, cfg)
    d = out / "attention"
    d.mkdir()
    calibration_ids = {c.case_id for c in _train_cases(args, cfg, cases)}
    counts = {True: [0, 0], False: [0, 0]}
    rows = []
    for c in cases:
        a = case_attention(c, params)
        save_mvol(d / f"{c.case_id}.mvol", ScalarVolume(a, c.spacing))
        gt = c.ln_gt.data > 0
        n1 = int((a[gt] == 1.0).sum())
        used = c.case_id in calibration_ids
        counts[used][0] += n1
        counts[used][1] += int(gt.sum())
        rows.append([c.case_id, int(used), int(gt.sum()), n1, repr(float((a > 0).mean()))])
    _write_csv(out / "coverage.csv",
               ["case_id", "calibration_case", "ln_voxels", "ln_voxels_attention_1", "support_fraction"], rows)
    covered, total = counts[True][0] + counts[False][0], counts[True][1] + counts[False][1]
    # only calibration cases are guaranteed full coverage
    dump_json(out / "coverage.json", {
        "ln_voxels": total, "ln_voxels_attention_1": covered, "coverage": covered / total if total else 1.0,
        "calibration_coverage": counts[True][0] / counts[True][1] if counts[True][1] else 1.0,
    })


def cmd_sample_audit(args, cfg, out):
    cases = _train_cases(args, cfg, _cohort(args))
    sc = [sample_case(c, _attention(args, c)) for c in cases]
    scfg = _sampler_cfg(cfg)
    n_batches = int(getattr(args, "batches", 50))
    batches = [sample_batch(sc, scfg, counter=i, threads=cfg["threads"]) for i in range(n_batches)]
    write_provenance_csv(out / "provenance.csv", batches)
    fg = np.array([b.has_foreground for b in batches])
    amax = np.array([b.attention.reshape(len(b.attention), -1).max(axis=1) for b in batches])
    dump_json(out / "audit.json", {
        "batches": n_batches, "patches": int(fg.size),
        "min_foreground_per_batch": int(fg.sum(axis=1).min()), "quota": scfg.quota,
        "uninformative_negatives": int(((~fg) & (amax <= 0)).sum()),
    })


def cmd_train_seg(args, cfg, out):
    cases = _train_cases(args, cfg, _cohort(args))
    use_att = cfg["attention"]["enabled"]
    sc = [sample_case(c, _attention(args, c) if use_att else np.ones(c.organs.dims, np.float32)) for c in cases]
    net, trace = train_micronet(sc, _train_cfg(cfg), use_attention=use_att, seed=cfg["seed"])
    save_checkpoint(out / "micronet.ckpt", net, {"attention": use_att, "seed": cfg["seed"]})
    write_trace_csv(out / "loss_trace.csv", trace)


def cmd_segment(args, cfg, out):
    cases = _eval_cases(args, cfg, _cohort(args))
    net, meta = load_micronet(_need(args, "checkpoint"))
    d = out / "seg"
    d.mkdir()
    window = tuple(cfg["inference"]["window"])
    for c in cases:
        a = _attention(args, c) if meta.get("attention") else None
        if meta.get("attention") and a is None:
            raise InputError("checkpoint was trained with attention; pass --attention-dir")
        mask = infer_segmentation(net, c.image, a, window)
        save_mvol(d / f"{c.case_id}.mvol", LabelVolume(mask.astype(np.uint16), c.spacing))


def cmd_evaluate(args, cfg, out):
    seg_dir = _need(args, "seg_dir")
    cases = [c for c in _cohort(args) if (seg_dir / f"{c.case_id}.mvol").exists()]
    if not cases:
        raise InputError(f"{seg_dir}: no segmentations matching the cohort")
    preds = {c.case_id: load_mvol(seg_dir / f"{c.case_id}.mvol").data for c in cases}
    att = None
    if getattr(args, "attention_dir", None):
        att = {c.case_id: _attention(args, c) for c in cases}
    ev = evaluate_segmentation(cases, preds, att, cfg["evaluate"]["iou_thresh"])
    keys = sorted(next(iter(ev.per_case.values())))
    _write_csv(out / "per_case.csv", ["case_id"] + keys,
               [[cid] + [repr(row[k]) if isinstance(row[k], float) else row[k] for k in keys]
                for cid, row in sorted(ev.per_case.items())])
    inst = ev.instance_mean if cfg["evaluate"]["averaging"] == "per_case" else ev.instance_pooled
    dump_json(out / "eval.json", {"voxel": ev.voxel_mean, "instance": inst, "instance_pooled": ev.instance_pooled,
                                  "averaging": cfg["evaluate"]["averaging"], "n_cases": len(cases),
                                  "fp_voxels_outside_attention": ev.fp_outside_attention})


def cmd_train_id(args, cfg, out):
    cases = _train_cases(args, cfg, _cohort(args))
    net, _ = load_micronet(_need(args, "checkpoint"))
    i = cfg["identify"]
    icfg = IdentifierConfig(tuple(i["crop_shape"]), i["epochs"], lr=i["lr"], threshold=i["threshold"])
    crops, labels = identifier_training_set(cases, icfg.crop_shape)
    clf, losses = train_identifier(crops, labels, net, icfg, cfg["seed"])
    save_checkpoint(out / "identifier.ckpt", clf, {"seed": cfg["seed"]})
    _write_csv(out / "identifier_loss.csv", ["epoch", "bce"], [[e, repr(v)] for e, v in enumerate(losses)])


def cmd_identify(args, cfg, out):
    seg_dir = _need(args, "seg_dir")
    cases = [c for c in _cohort(args) if (seg_dir / f"{c.case_id}.mvol").exists()]
    clf = _load_classifier(_need(args, "identifier"))
    i = cfg["identify"]
    d = out / "class_aware"
    d.mkdir()
    rows = []
    for c in cases:
        seg = load_mvol(seg_dir / f"{c.case_id}.mvol").data
        inst = extract_instances(seg, c.spacing, gt=c.ln_gt.data)
        scored = identify_instances(clf, c.image, inst, tuple(i["crop_shape"]), i["threshold"])
        save_mvol(d / f"{c.case_id}.mvol", LabelVolume(class_aware_mask(c.organs.dims, scored), c.spacing))
        rows += [(c.case_id, s) for s in scored]
    write_instance_csv(out / "instances.csv", rows)


def cmd_aggregate(args, cfg, out):
    cases = _cohort(args)
    fold = _fold(args, cfg)
    if fold is None:
        raise InputError("aggregate needs --split-file")
    src = cfg["aggregate"]["infer_vmax"]
    val = _records(args, _subset(cases, fold.val), "val")
    test = _records(args, _subset(cases, fold.test), "test")
    choice = select_threshold([max_pos_volume(r, src) for r in val], [r.gt_metastasis for r in val])
    pred = aggregate_by_threshold(test, choice.tau, src, choice.direction)
    truth = [r.gt_metastasis for r in test]
    m = classification_metrics([float(pred[r.patient_id]) for r in test], truth, 0.5)
    _write_csv(out / "patient_predictions.csv", ["patient_id", "v_max_mm3", "pred_label", "gt_label"],
               [[r.patient_id, repr(max_pos_volume(r, src)), int(pred[r.patient_id]), int(r.gt_metastasis)]
                for r in test])
    dump_json(out / "aggregate.json", {"tau": choice.tau, "direction": choice.direction,
                                       "val_balanced_accuracy": choice.balanced_accuracy, "test": m,
                                       "volume_source": src})


def _vmax(records, source):
    return np.array([max_pos_volume(r, source) for r in records], dtype=np.float32)


def _fusion_cfg(cfg):
    f = cfg["fusion"]
    return FusionConfig(f["patch_size"], f["k"], f["epochs"], lr=f["lr"])


def cmd_fuse_train(args, cfg, out):
    cases = _cohort(args)
    fold = _fold(args, cfg)
    if fold is None:
        raise InputError("fuse-train needs --split-file")
    train = _subset(cases, fold.train)
    fcfg = _fusion_cfg(cfg)
    imgs, masks = tumor_patch_stack(train, fcfg.patch_size)
    labels = [c.metastasis for c in train]
    use_volume = not getattr(args, "tumor_only", False)
    vmax = None
    if use_volume:
        src = cfg["aggregate"]["train_vmax"]
        if src == "predicted" and getattr(args, "instances", None) is None:
            raise InputError("aggregate.train_vmax=predicted needs --instances covering the training split")
        vmax = _vmax(_records(args, train, "train"), src)
    head, losses = train_fusion(imgs, masks, labels, vmax, fcfg, cfg["seed"])
    save_checkpoint(out / "fusion.ckpt", head, {"seed": cfg["seed"], "use_volume": use_volume})
    _write_csv(out / "fusion_loss.csv", ["epoch", "bce"], [[e, repr(v)] for e, v in enumerate(losses)])


def cmd_fuse_predict(args, cfg, out):
    cases = _cohort(args)
    fold = _fold(args, cfg)
    if fold is None:
        raise InputError("fuse-predict needs --split-file")
    head, meta = _load_fusion(_need(args, "fusion"))
    fcfg = _fusion_cfg(cfg)
    src = cfg["aggregate"]["infer_vmax"]
    results = {}
    for name in ("val", "test"):
        subset = _subset(cases, getattr(fold, name))
        recs = _records(args, subset, name)
        imgs, masks = tumor_patch_stack(subset, fcfg.patch_size)
        vmax = _vmax(recs, src)
        rows = []
        for i, r in enumerate(recs):
            prob, per = fuse_and_classify(head, imgs[i], masks[i], vmax[i] if meta.get("use_volume") else None)
            rows.append({"patient_id": r.patient_id, "v_max_mm3": vmax[i], "per_patch": per, "prob": prob,
                         "gt": r.gt_metastasis})
        results[name] = rows
    val = results["val"]
    choice = select_threshold([r["prob"] for r in val], [r["gt"] for r in val])
    for r in results["test"]:
        r["pred"] = r["prob"] > choice.tau if choice.direction == "greater" else r["prob"] <= choice.tau
    test = results["test"]
    write_prediction_csv(out / "fusion_predictions.csv", test)
    truth = [r["gt"] for r in test]
    report = {"operating_point": choice.tau, "direction": choice.direction,
              "test": classification_metrics([float(r["pred"]) for r in test], truth, 0.5)}
    if any(truth) and not all(truth):
        report["test_auc"] = auc_rank([r["prob"] for r in test], truth)
    dump_json(out / "fusion_report.json", report)


def _read_predictions(path):
    """Patient ids, called labels, continuous scores and truth from a prediction table."""
    ids, calls, scores, labels = [], [], [], []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            ids.append(r["patient_id"])
            calls.append(int(r["pred_label"]))
            # fusion tables carry a probability, aggregation tables the volume cue
            scores.append(float(r["ensemble_prob"] if "ensemble_prob" in r else r["v_max_mm3"]))
            labels.append(int(r["gt_label"]))
    return ids, np.array(calls, dtype=np.float64), np.array(scores), np.array(labels)


def _ba(calls, y):
    return classification_metrics(calls, y, 0.5)["balanced_accuracy"]


def cmd_stats(args, cfg, out):
    """Balanced accuracy uses the called labels; DeLong uses the continuous scores."""
    ids, ca_, sa, y = _read_predictions(_need(args, "predictions"))
    iters = cfg["stats"]["bootstrap_iters"]
    report = {"n": len(y), "seed": cfg["seed"]}
    if getattr(args, "predictions_b", None) is None:
        report["balanced_accuracy"] = bootstrap_ci(_ba, ca_, y, iters, cfg["seed"]).to_json()
    else:
        ids_b, cb_, sb, yb = _read_predictions(_need(args, "predictions_b"))
        if ids_b != ids or not np.array_equal(y, yb):
            raise InputError("the two prediction tables must list the same patients in the same order")
        ra, rb = paired_bootstrap(_ba, [ca_, cb_], y, iters, cfg["seed"])
        report["balanced_accuracy_a"] = ra.to_json()
        report["balanced_accuracy_b"] = rb.to_json()
        if cfg["stats"]["protocol"] == "bootstrap_wilcoxon":
            report["wilcoxon"] = wilcoxon_signed_rank(ra.distribution, rb.distribution).to_json()
        else:
            hit_a = (ca_ == y).astype(float)
            hit_b = (cb_ == y).astype(float)
            report["wilcoxon"] = wilcoxon_signed_rank(hit_a, hit_b).to_json()
        if 0 < y.sum() < len(y):
            report["delong"] = delong_test(sa, sb, y).to_json()
    dump_json(out / "stats.json", report)


COMMANDS = {
    "phantom": cmd_phantom, "split": cmd_split, "calibrate": cmd_calibrate, "attention": cmd_attention,
    "sample-audit": cmd_sample_audit, "train-seg": cmd_train_seg, "segment": cmd_segment,
    "evaluate": cmd_evaluate, "train-id": cmd_train_id, "identify": cmd_identify, "aggregate": cmd_aggregate,
    "fuse-train": cmd_fuse_train, "fuse-predict": cmd_fuse_predict, "stats": cmd_stats,
}


# ---------------------------------------------------------------------------
# argument parsing and run directories
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True, help="run directory (must not exist or be empty)")
    p.add_argument("--attention", choices=("on", "off"))
    p.add_argument("--loss-form", choices=("paper", "standard"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lnmet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _common(p)
        p.add_argument("--cohort")
        p.add_argument("--split-file")
        p.add_argument("--params")
        p.add_argument("--attention-dir")
        p.add_argument("--checkpoint")
        p.add_argument("--seg-dir")
        p.add_argument("--identifier")
        p.add_argument("--instances")
        p.add_argument("--fusion")
        p.add_argument("--predictions")
        p.add_argument("--predictions-b")
        p.add_argument("--cases", choices=("eval", "all"), default="eval")
        p.add_argument("--batches", type=int, default=50)
        p.add_argument("--tumor-only", action="store_true")
    r = sub.add_parser("rerun", help="replay a run directory")
    r.add_argument("run_dir")
    r.add_argument("--out", required=True)
    r.add_argument("-v", "--verbose", action="store_true")
    return ap


def _flags(args) -> dict:
    flags: dict = {}
    for key in ("seed", "fold", "threads"):
        if getattr(args, key, None) is not None:
            flags[key] = getattr(args, key)
    if getattr(args, "attention", None):
        flags["attention"] = {"enabled": args.attention == "on"}
    if getattr(args, "loss_form", None):
        flags["train"] = {"loss_form": args.loss_form}
    return flags


def _prepare_out(path) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"run directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    return out


def execute(args) -> None:
    if args.command == "rerun":
        run_dir = Path(args.run_dir)
        try:
            run = json.loads((run_dir / "run.json").read_text())
        except OSError as exc:
            raise InputError(f"{run_dir}: not a run directory ({exc})") from exc
        argv = [run["command"], "--config", str(run_dir / "config.yaml"), "--out", args.out]
        for key, value in run["inputs"].items():
            if not Path(value["path"]).exists() or tree_sha256(value["path"]) != value["sha256"]:
                raise InputError(f"input {value['path']} is missing or changed since the recorded run")
            argv += [f"--{key.replace('_', '-')}", value["path"]]
        for key, value in run.get("options", {}).items():
            if value is True:
                argv.append(f"--{key.replace('_', '-')}")
            elif value not in (None, False):
                argv += [f"--{key.replace('_', '-')}", str(value)]
        replay = build_parser().parse_args(argv)
        replay.verbose = args.verbose
        return execute(replay)

    cfg = load_config(args.config, _flags(args))
    torch.set_num_threads(1)
    out = _prepare_out(args.out)
    inputs = {}
    for key in INPUT_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            p = Path(value)
            if not p.exists():
                raise InputError(f"input not found: {value}")
            inputs[key] = {"path": str(p.resolve()), "sha256": tree_sha256(p)}
    options = {k: getattr(args, k) for k in ("cases", "batches", "tumor_only")}
    dump_config(cfg, out / "config.yaml")
    (out / "run.json").write_text(json.dumps({
        "command": args.command, "version": __version__, "seed": cfg["seed"], "fold": cfg["fold"],
        "inputs": inputs, "options": options,
    }, indent=2, sort_keys=True) + "\n")
    COMMANDS[args.command](args, cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        execute(args)
    except LnmetError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

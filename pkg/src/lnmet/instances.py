"""LN instance extraction, fixed-shape cropping, and positive/negative
identification with a classifier that reuses the segmentation encoder."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from .errors import DegenerateDataError, InputError, NumericalError
from .net import Encoder, MicroNet
from .train import single_threaded
from .volume import Spacing, crop_array, label_components, volume_mm3

log = logging.getLogger(__name__)

NEGATIVE, POSITIVE, UNKNOWN = "negative", "positive", "unknown"
DESK_CROP_SHAPE = (32, 32, 32)
CLINICAL_CROP_SHAPE = (96, 96, 80)


@dataclass(frozen=True, eq=False)
class LNInstance:
    component_id: int
    voxels: np.ndarray  # (n, 3) int coordinates, x-fastest order
    volume_mm3: float
    gt_label: str = UNKNOWN
    pred_score: float = float("nan")
    pred_label: str = UNKNOWN

    def __post_init__(self):
        if len(self.voxels) == 0:
            raise InputError("an instance needs at least one voxel")

    @property
    def centroid(self) -> tuple[int, int, int]:
        """Mean voxel coordinate rounded toward the lower index."""
        return tuple(int(v) for v in np.floor(self.voxels.mean(axis=0)))

    @property
    def size(self) -> int:
        return len(self.voxels)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.voxels.min(axis=0), self.voxels.max(axis=0)


def _voxel_lists(lab: np.ndarray, k: int) -> list[np.ndarray]:
    coords = np.argwhere(lab > 0)
    w, h, _ = lab.shape
    lin = coords[:, 0] + w * (coords[:, 1] + h * coords[:, 2])
    ids = lab[tuple(coords.T)]
    order = np.lexsort((lin, ids))
    coords, ids = coords[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, k + 2))
    return [coords[bounds[i]:bounds[i + 1]] for i in range(k)]


def extract_instances(seg, spacing, connectivity: int = 26, gt=None) -> list[LNInstance]:
    """One instance per connected component of a binary mask, ordered by ID.

    ``gt`` optionally holds per-voxel GT classes (1 negative, 2 positive); an
    instance takes the GT class covering most of its voxels (positive wins a
    tie) or ``unknown`` when it touches no GT LN.
    """
    arr = np.asarray(getattr(seg, "data", seg))
    if arr.size and arr.max() > 1:
        raise InputError("extract_instances expects a binary mask")
    lab, k = label_components(arr, connectivity)
    sp = Spacing.of(spacing)
    g = None if gt is None else np.asarray(getattr(gt, "data", gt))
    out = []
    for cid, vox in enumerate(_voxel_lists(lab, k), start=1):
        label = UNKNOWN
        if g is not None:
            vals = g[tuple(vox.T)]
            n_pos, n_neg = int((vals == 2).sum()), int((vals == 1).sum())
            if n_pos or n_neg:
                label = POSITIVE if n_pos >= n_neg else NEGATIVE
        out.append(LNInstance(cid, vox, volume_mm3(len(vox), sp), label))
    return out


def gt_instances(ln_gt, spacing, connectivity: int = 26) -> list[LNInstance]:
    """Instances of a GT LN volume with labels 1 (negative) and 2 (positive)."""
    g = np.asarray(getattr(ln_gt, "data", ln_gt))
    return extract_instances((g > 0).astype(np.uint8), spacing, connectivity, gt=g)


def crop_instance(image: np.ndarray, inst: LNInstance, shape=DESK_CROP_SHAPE) -> np.ndarray:
    """Zero-padded crop of every channel of ``image`` centred on the instance."""
    return crop_array(image, inst.centroid, shape, "zero")


# ---------------------------------------------------------------------------
# identification
# ---------------------------------------------------------------------------

class InstanceClassifier(nn.Module):
    """Segmentation encoder followed by GAP, an affine map and a sigmoid."""

    def __init__(self, in_channels: int = 2, channels=(8, 16)):
        super().__init__()
        self.config = {"in_channels": in_channels, "channels": list(channels)}
        self.encoder = Encoder(in_channels, channels)
        self.head = nn.Linear(channels[1], 1)

    @classmethod
    def from_segmentation(cls, net: MicroNet) -> "InstanceClassifier":
        cfg = net.config
        clf = cls(cfg["in_channels"], tuple(cfg["channels"]))
        clf.encoder.load_state_dict(copy.deepcopy(net.encoder.state_dict()))
        return clf

    def logits(self, x):
        _, e2 = self.encoder(x)
        return self.head(e2.mean(dim=(2, 3, 4)))[:, 0]

    def forward(self, x):
        return torch.sigmoid(self.logits(x))


@dataclass(frozen=True)
class IdentifierConfig:
    crop_shape: tuple[int, int, int] = DESK_CROP_SHAPE
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.95
    threshold: float = 0.5


def train_identifier(crops: np.ndarray, labels, seg_net: MicroNet, cfg: IdentifierConfig = IdentifierConfig(),
                     seed: int = 0) -> tuple[InstanceClassifier, list[float]]:
    """Fine-tune a classifier on GT instance crops with binary cross-entropy.

    ``crops`` is ``(N, C, w, h, d)``; ``labels`` are 1 for positive LNs.
    """
    y = np.asarray(labels, dtype=np.float32)
    if len(y) != len(crops):
        raise InputError("one label per crop required")
    if len(np.unique(y)) < 2:
        raise DegenerateDataError(
            f"identifier training needs both classes; got {len(y)} crops all labelled {y[:1]}")
    clf = InstanceClassifier.from_segmentation(seg_net)
    x_all = torch.from_numpy(np.asarray(crops, dtype=np.float32))
    y_all = torch.from_numpy(y)
    rng = np.random.default_rng(seed)
    losses = []
    with single_threaded():
        torch.manual_seed(seed)
        opt = torch.optim.SGD(clf.parameters(), lr=cfg.lr, momentum=cfg.momentum, nesterov=True)
        bce = nn.BCEWithLogitsLoss()
        clf.train()
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(y))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = torch.from_numpy(order[start:start + cfg.batch_size])
                loss = bce(clf.logits(x_all[idx]), y_all[idx])
                if not torch.isfinite(loss):
                    raise NumericalError(f"identifier loss diverged in epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
            losses.append(total / len(y))
    clf.eval()
    return clf, losses


def score_crops(clf: InstanceClassifier, crops: np.ndarray, batch: int = 32) -> np.ndarray:
    if len(crops) == 0:
        return np.zeros(0)
    out = []
    with torch.no_grad():
        for s in range(0, len(crops), batch):
            out.append(clf(torch.from_numpy(np.asarray(crops[s:s + batch], dtype=np.float32))).double().numpy())
    return np.concatenate(out)


def identify_instances(clf: InstanceClassifier, image: np.ndarray, instances: list[LNInstance],
                       crop_shape=DESK_CROP_SHAPE, threshold: float = 0.5) -> list[LNInstance]:
    """Score every segmented instance; returns new instances with predictions."""
    if not instances:
        return []
    crops = np.stack([crop_instance(image, i, crop_shape) for i in instances])
    scores = score_crops(clf, crops)
    return [replace(inst, pred_score=float(s), pred_label=POSITIVE if s >= threshold else NEGATIVE)
            for inst, s in zip(instances, scores)]


def class_aware_mask(dims, instances: list[LNInstance]) -> np.ndarray:
    """Label 1 for instances predicted negative, 2 for predicted positive."""
    out = np.zeros(dims, dtype=np.uint16)
    for inst in instances:
        out[tuple(inst.voxels.T)] = 2 if inst.pred_label == POSITIVE else 1
    return out


def write_instance_csv(path, rows) -> None:
    """``rows`` is an iterable of ``(case_id, LNInstance)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case_id", "instance_id", "cx", "cy", "cz", "volume_mm3", "gt_label", "pred_score", "pred_label"])
        for case_id, inst in rows:
            w.writerow([case_id, inst.component_id, *inst.centroid, repr(inst.volume_mm3),
                        inst.gt_label, repr(inst.pred_score), inst.pred_label])


def read_instance_csv(path) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["case_id"], []).append({
                "instance_id": int(r["instance_id"]),
                "volume_mm3": float(r["volume_mm3"]),
                "gt_label": r["gt_label"],
                "pred_score": float(r["pred_score"]),
                "pred_label": r["pred_label"],
            })
    return out

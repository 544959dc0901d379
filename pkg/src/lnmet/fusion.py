"""Tumour-patch classifier fused with the largest positive LN volume.

Each patient contributes nine 2-D patches: the three largest tumour cross
sections in each of the axial, sagittal and coronal planes.  A small conv
backbone, gated early by a side branch that sees the tumour mask, feeds an
orderless descriptor (global average pooling next to a texture encoding
layer).  The normalised LN volume enters through an affine map added to
that descriptor before the classifier.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateDataError, InputError, NumericalError
from .train import single_threaded

log = logging.getLogger(__name__)

N_PATCHES = 9
DESK_PATCH = 32
CLINICAL_PATCH = 224
# slicing axis per plane for (W, H, D) volumes indexed [x, y, z]
PLANE_AXES = {"axial": 2, "sagittal": 0, "coronal": 1}


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TumorPatches:
    images: np.ndarray  # (9, C, p, p)
    masks: np.ndarray  # (9, 1, p, p)
    slices: tuple  # ((plane, index), ...)
    padded: bool


def _crop2d(arr: np.ndarray, center, size: int) -> np.ndarray:
    """Zero-padded square crop of the last two axes."""
    h, w = arr.shape[-2:]
    out = np.zeros(arr.shape[:-2] + (size, size), dtype=arr.dtype)
    s0, s1 = center[0] - size // 2, center[1] - size // 2
    a0, a1 = max(s0, 0), max(s1, 0)
    b0, b1 = min(s0 + size, h), min(s1 + size, w)
    if a0 < b0 and a1 < b1:
        out[..., a0 - s0:b0 - s0, a1 - s1:b1 - s1] = arr[..., a0:b0, a1:b1]
    return out


def top_slices(mask: np.ndarray, axis: int, k: int = 3) -> tuple[list[int], bool]:
    """Indices of the ``k`` largest cross sections along ``axis``.

    Sorted by area (descending), ties to the lower index.  If fewer than
    ``k`` slices contain tumour, the largest is repeated and the flag is set.
    """
    other = tuple(a for a in range(3) if a != axis)
    area = mask.sum(axis=other)
    nz = np.flatnonzero(area)
    order = sorted(nz.tolist(), key=lambda i: (-int(area[i]), i))
    picked = order[:k]
    padded = len(picked) < k
    while len(picked) < k:
        picked.append(order[0])
    return picked, padded


def extract_tumor_patches(image: np.ndarray, tumor, size: int = DESK_PATCH) -> TumorPatches:
    """Nine tumour-centred 2-D patches from a ``(C, W, H, D)`` image."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[None]
    mask = np.asarray(getattr(tumor, "data", tumor)) > 0
    if mask.shape != img.shape[1:]:
        raise InputError("tumour mask and image grids differ")
    if not mask.any():
        raise DegenerateDataError("tumour mask is empty")
    images, masks, slices, padded = [], [], [], False
    for plane, axis in PLANE_AXES.items():
        idx, pad = top_slices(mask, axis)
        padded |= pad
        for i in idx:
            m2 = np.take(mask, i, axis=axis)
            im2 = np.take(img, i, axis=axis + 1)
            c = np.floor(np.argwhere(m2).mean(axis=0)).astype(int)
            images.append(_crop2d(im2, c, size))
            masks.append(_crop2d(m2[None].astype(np.float32), c, size))
            slices.append((plane, int(i)))
    return TumorPatches(np.stack(images).astype(np.float32), np.stack(masks), tuple(slices), padded)


# ---------------------------------------------------------------------------
# network pieces
# ---------------------------------------------------------------------------

def tel_encode(x, codewords, smoothing):
    """Texture encoding of a feature set.

    ``x`` is ``(N, C)`` or ``(B, N, C)``; returns ``(K*C,)`` or ``(B, K*C)``.
    Works on tensors (differentiable) and arrays.
    """
    as_numpy = isinstance(x, np.ndarray)
    if as_numpy:
        x = torch.from_numpy(x)
        codewords = torch.as_tensor(codewords, dtype=x.dtype)
        smoothing = torch.as_tensor(smoothing, dtype=x.dtype)
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    r = x[:, :, None, :] - codewords[None, None]  # (B, N, K, C)
    w = torch.softmax(-smoothing[None, None] * (r ** 2).sum(-1), dim=2)
    e = (w[..., None] * r).sum(1) / x.shape[1]  # (B, K, C)
    out = e.flatten(1)
    if squeeze:
        out = out[0]
    return out.numpy() if as_numpy else out


class TextureEncoding(nn.Module):
    def __init__(self, channels: int, k: int = 8):
        super().__init__()
        std = 1.0 / (k * channels) ** 0.5
        self.codewords = nn.Parameter(torch.empty(k, channels).uniform_(-std, std))
        self.smoothing = nn.Parameter(torch.empty(k).uniform_(0.5, 1.5))

    def forward(self, fmap):
        b, c = fmap.shape[:2]
        x = fmap.reshape(b, c, -1).transpose(1, 2)
        return tel_encode(x, self.codewords, self.smoothing)


class SideBranch(nn.Module):
    """Mask -> rectified gate; starts as the identity (weights 0, bias 1)."""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(1, channels, kernel, padding=kernel // 2)
        nn.init.zeros_(self.conv.weight)
        nn.init.ones_(self.conv.bias)

    def forward(self, features, mask):
        if features.shape[-2:] != mask.shape[-2:]:
            raise InputError(f"mask grid {tuple(mask.shape[-2:])} != feature grid {tuple(features.shape[-2:])}")
        return features * F.relu(self.conv(mask))


def side_branch_apply(branch: SideBranch, features, mask):
    return branch(features, mask)


class ToyBackbone(nn.Module):
    """Three 2-D conv stages; conv1 output is exposed for gating."""

    def __init__(self, in_channels: int = 2, widths=(8, 16, 16)):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.conv2 = nn.Conv2d(widths[0], widths[1], 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(widths[1], widths[2], 3, padding=1)
        self.out_channels = widths[2]

    def forward(self, x, gate=None):
        h = self.conv1(x)
        if gate is not None:
            h = gate(h)
        h = F.relu(h)
        h = F.relu(self.conv2(h))
        return F.relu(self.conv3(h))


class FusionHead(nn.Module):
    def __init__(self, in_channels: int = 2, widths=(8, 16, 16), k: int = 8, use_volume: bool = True):
        super().__init__()
        self.config = {"in_channels": in_channels, "widths": list(widths), "k": k, "use_volume": use_volume}
        self.backbone = ToyBackbone(in_channels, widths)
        self.side = SideBranch(widths[0])
        self.tel = TextureEncoding(widths[2], k)
        dim = widths[2] * (k + 1)
        self.volume_norm = nn.BatchNorm1d(1, affine=False)
        self.volume_fc = nn.Linear(1, dim)
        self.classifier = nn.Linear(dim, 1)
        self.use_volume = use_volume
        if not use_volume:
            self.zero_volume_path()

    def zero_volume_path(self):
        with torch.no_grad():
            self.volume_fc.weight.zero_()
            self.volume_fc.bias.zero_()
        for p in self.volume_fc.parameters():
            p.requires_grad_(False)

    def features(self, patches, masks):
        f_l4 = self.backbone(patches, gate=lambda h: self.side(h, masks))
        return torch.cat([f_l4.mean(dim=(2, 3)), self.tel(f_l4)], dim=1)

    def logits(self, patches, masks, v_max=None):
        f = self.features(patches, masks)
        if v_max is not None:
            v = torch.as_tensor(v_max, dtype=f.dtype).reshape(-1, 1)
            f = f + self.volume_fc(self.volume_norm(v))
        return self.classifier(f)[:, 0]

    def forward(self, patches, masks, v_max=None):
        return torch.sigmoid(self.logits(patches, masks, v_max))


def fuse_and_classify(head: FusionHead, patches, masks, v_max: float | None) -> tuple[float, np.ndarray]:
    """Patient probability (mean over the nine patches) and per-patch values."""
    if len(patches) != N_PATCHES or len(masks) != N_PATCHES:
        raise InputError(f"expected {N_PATCHES} patches, got {len(patches)}")
    head.eval()
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(patches, dtype=np.float32))
        m = torch.as_tensor(np.asarray(masks, dtype=np.float32))
        v = None if v_max is None else torch.full((N_PATCHES,), float(v_max))
        per = head(x, m, v).double().numpy()
    return float(per.mean()), per


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionConfig:
    patch_size: int = DESK_PATCH
    k: int = 8
    epochs: int = 40
    batch_size: int = 36
    lr: float = 3e-3
    weight_decay: float = 1e-4


def train_fusion(patches: np.ndarray, masks: np.ndarray, labels, v_max=None,
                 cfg: FusionConfig = FusionConfig(), seed: int = 0) -> tuple[FusionHead, list[float]]:
    """Train on per-patient patch stacks ``(P, 9, C, p, p)``.

    Every patch is one sample carrying its patient's label (and ``v_max``).
    ``v_max=None`` trains the tumour-only variant with the volume path zeroed.
    """
    y = np.asarray(labels, dtype=np.float32)
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("fusion training needs both classes")
    n_pat = len(y)
    x = torch.from_numpy(np.asarray(patches, dtype=np.float32).reshape((n_pat * N_PATCHES,) + patches.shape[2:]))
    m = torch.from_numpy(np.asarray(masks, dtype=np.float32).reshape((n_pat * N_PATCHES,) + masks.shape[2:]))
    t = torch.from_numpy(np.repeat(y, N_PATCHES))
    v = None if v_max is None else torch.from_numpy(np.repeat(np.asarray(v_max, dtype=np.float32), N_PATCHES))
    rng = np.random.default_rng(seed)
    losses = []
    with single_threaded():
        torch.manual_seed(seed)
        head = FusionHead(x.shape[1], k=cfg.k, use_volume=v is not None)
        params = [p for p in head.parameters() if p.requires_grad]
        opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        bce = nn.BCEWithLogitsLoss()
        for epoch in range(cfg.epochs):
            head.train()
            order = rng.permutation(len(t))
            total = 0.0
            for s in range(0, len(order), cfg.batch_size):
                idx = torch.from_numpy(order[s:s + cfg.batch_size])
                if len(idx) < 2:
                    continue
                loss = bce(head.logits(x[idx], m[idx], None if v is None else v[idx]), t[idx])
                if not torch.isfinite(loss):
                    raise NumericalError(f"fusion loss diverged in epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
            losses.append(total / len(t))
    head.eval()
    return head, losses


def write_prediction_csv(path, rows) -> None:
    """``rows``: dicts with patient_id, v_max_mm3, per_patch, prob, pred, gt."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "v_max_mm3"] + [f"p{i}" for i in range(N_PATCHES)]
                   + ["ensemble_prob", "pred_label", "gt_label"])
        for r in rows:
            w.writerow([r["patient_id"], repr(float(r["v_max_mm3"]))]
                       + [repr(float(p)) for p in r["per_patch"]]
                       + [repr(float(r["prob"])), int(r["pred"]), int(r["gt"])])

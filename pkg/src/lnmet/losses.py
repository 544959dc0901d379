"""Segmentation losses with exact analytic gradients.

Fields are arrays shaped ``(2, ...)``: channel 0 is background, channel 1
is lymph node.  Gradients are taken with respect to every entry of ``p``
independently (the two channels are not tied together), which is what the
softmax upstream of the loss needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import torch

from .errors import InputError

PROB_CLIP = 1e-7
TVERSKY_EPS = 1e-6


@dataclass(frozen=True)
class TverskyWeights:
    alpha: float = 0.5
    beta: float = 1.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InputError("Tversky weights must be non-negative")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    parts: dict = field(default_factory=dict)


def _check(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise InputError(f"prediction shape {p.shape} != target shape {y.shape}")
    if p.shape[0] != 2:
        raise InputError("fields must have two channels on axis 0")
    return p, y


def one_hot(label: np.ndarray) -> np.ndarray:
    lab = np.asarray(label) > 0
    return np.stack([~lab, lab]).astype(np.float64)


def tversky_loss(p, y, w: TverskyWeights = TverskyWeights(),
                 form: Literal["paper", "standard"] = "paper", eps: float = TVERSKY_EPS) -> LossResult:
    """Tversky loss.

    ``form='paper'``::

        -(2/|V|) * TP / (2 TP + alpha FP + beta FN)

    ``form='standard'``::

        1 - TP / (TP + alpha FP + beta FN)

    with TP = sum p1 y1, FP = sum p1 y0, FN = sum p0 y1 and ``eps`` added to
    the denominator.
    """
    p, y = _check(p, y)
    p0, p1 = p[0], p[1]
    y0, y1 = y[0], y[1]
    tp = float((p1 * y1).sum())
    fp = float((p1 * y0).sum())
    fn = float((p0 * y1).sum())
    grad = np.zeros_like(p)
    if form == "paper":
        n_vox = p1.size
        c = 2.0 / n_vox
        den = 2.0 * tp + w.alpha * fp + w.beta * fn + eps
        value = -c * tp / den
        # d/dTP, d/dFP, d/dFN of -c * TP / den
        g_tp = -c * (den - 2.0 * tp) / den ** 2
    elif form == "standard":
        c = 1.0
        den = tp + w.alpha * fp + w.beta * fn + eps
        value = 1.0 - tp / den
        g_tp = -(den - tp) / den ** 2
    else:
        raise InputError(f"unknown Tversky form {form!r}")
    g_fp = c * tp * w.alpha / den ** 2
    g_fn = c * tp * w.beta / den ** 2
    grad[1] = g_tp * y1 + g_fp * y0
    grad[0] = g_fn * y1
    return LossResult(float(value), grad)


def ce_loss(p, y, clip: float = PROB_CLIP) -> LossResult:
    """Mean voxel cross-entropy with probabilities clipped to [clip, 1 - clip]."""
    p, y = _check(p, y)
    n_vox = p[0].size
    pc = np.clip(p, clip, 1.0 - clip)
    value = -float((y * np.log(pc)).sum()) / n_vox
    inside = (p > clip) & (p < 1.0 - clip)
    grad = np.where(inside, -y / (pc * n_vox), 0.0)
    return LossResult(value, grad)


def combined_loss(p, y, w: TverskyWeights = TverskyWeights(), form: str = "paper") -> LossResult:
    ce = ce_loss(p, y)
    tv = tversky_loss(p, y, w, form)
    return LossResult(ce.value + tv.value, ce.grad + tv.grad, {"ce": ce.value, "tversky": tv.value})


def level_weights(n_levels: int) -> np.ndarray:
    """Deep-supervision weights: halve per coarser level, normalised to 1."""
    w = 0.5 ** np.arange(n_levels)
    return w / w.sum()


def deep_supervision_loss(outputs, targets, attention=None, w: TverskyWeights = TverskyWeights(),
                          form: str = "paper") -> tuple[LossResult, list[np.ndarray]]:
    """Weighted sum of :func:`combined_loss` over resolution levels.

    Level 0 is the full-resolution output.  ``attention`` (one map per level)
    is only validated here; it acts on features inside the network, not on
    the loss.  Returns the total and the per-level gradients.
    """
    if len(outputs) != len(targets):
        raise InputError(f"{len(outputs)} outputs but {len(targets)} targets")
    if attention is not None and len(attention) != len(outputs):
        raise InputError(f"{len(outputs)} outputs but {len(attention)} attention maps")
    lw = level_weights(len(outputs))
    total, ce, tv, grads = 0.0, 0.0, 0.0, []
    for weight, p, y in zip(lw, outputs, targets):
        r = combined_loss(p, y, w, form)
        total += weight * r.value
        ce += weight * r.parts["ce"]
        tv += weight * r.parts["tversky"]
        grads.append(weight * r.grad)
    return LossResult(total, np.zeros(0), {"ce": ce, "tversky": tv}), grads


class _InjectGrad(torch.autograd.Function):
    """Attaches a precomputed analytic gradient to a scalar loss."""

    @staticmethod
    def forward(ctx, probs, value, grad):
        ctx.save_for_backward(grad)
        return value.clone()

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad * grad_out, None, None


def torch_combined_loss(probs: torch.Tensor, target: torch.Tensor, w: TverskyWeights = TverskyWeights(),
                        form: str = "paper", weight: float = 1.0):
    """Combined loss on ``(B, 2, ...)`` tensors, batch pooled into one field.

    The value and gradient come from :func:`combined_loss`; returns
    ``(loss_tensor, {"ce": .., "tversky": ..})`` with ``weight`` applied.
    """
    p = probs.detach().transpose(0, 1).double().numpy()
    y = target.detach().transpose(0, 1).double().numpy()
    r = combined_loss(p, y, w, form)
    grad = torch.from_numpy(weight * r.grad).transpose(0, 1).to(probs.dtype).contiguous()
    value = torch.tensor(weight * r.value, dtype=probs.dtype)
    parts = {k: weight * v for k, v in r.parts.items()}
    return _InjectGrad.apply(probs, value, grad), parts

"""Segmentation training loop and sliding-window inference."""

from __future__ import annotations

import contextlib
import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import InputError, NumericalError
from .losses import TverskyWeights, level_weights, torch_combined_loss
from .net import MicroNet, attention_pyramid, downsample_labels
from .sampler import SampleCase, SamplerConfig, sample_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    lr: float = 0.03
    momentum: float = 0.95
    weight_decay: float = 1e-4
    loss_form: str = "paper"
    alpha: float = 0.5
    beta: float = 1.5
    channels: tuple[int, int] = (8, 16)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    grad_clip: float = 12.0
    # lr * (1 - step/steps) ** poly_power; 0 keeps the rate constant
    poly_power: float = 0.9


@dataclass
class TraceRow:
    step: int
    ce: float
    tversky: float
    seg: float


@contextlib.contextmanager
def single_threaded():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def _one_hot_torch(label: torch.Tensor) -> torch.Tensor:
    fg = (label > 0).to(torch.float32)
    return torch.stack([1.0 - fg, fg], dim=1)


def train_micronet(cases: list[SampleCase], cfg: TrainConfig, use_attention: bool = True,
                   seed: int = 0) -> tuple[MicroNet, list[TraceRow]]:
    """Momentum-SGD training on sampled patches; deterministic given ``seed``.

    With ``use_attention`` the fused attention map multiplies the penultimate
    features and negatives are drawn by informative selection; without it the
    network and sampler run as the plain baseline.
    """
    if not cases:
        raise InputError("no training cases")
    sampler_cfg = replace(cfg.sampler, seed=seed, informative=use_attention)
    weights = TverskyWeights(cfg.alpha, cfg.beta)
    lw = level_weights(MicroNet.levels)
    trace: list[TraceRow] = []
    with single_threaded():
        torch.manual_seed(seed)
        net = MicroNet(cases[0].image.shape[0], cfg.channels)
        opt = torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                              nesterov=True, weight_decay=cfg.weight_decay)
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda t: (1.0 - t / cfg.steps) ** cfg.poly_power)
        net.train()
        for step in range(cfg.steps):
            batch = sample_batch(cases, sampler_cfg, counter=step)
            x = torch.from_numpy(batch.images.astype(np.float32))
            lab = torch.from_numpy(batch.labels.astype(np.int64))
            att = attention_pyramid(torch.from_numpy(batch.attention.astype(np.float32))) if use_attention else None
            logits = net(x, att)
            ce, tv = 0.0, 0.0
            loss = None
            for level, (out, weight) in enumerate(zip(logits, lw)):
                target = _one_hot_torch(downsample_labels(lab, 2 ** level))
                probs = torch.softmax(out, dim=1)
                lv, parts = torch_combined_loss(probs, target, weights, cfg.loss_form, float(weight))
                loss = lv if loss is None else loss + lv
                ce += parts["ce"]
                tv += parts["tversky"]
            total = ce + tv
            if not math.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at step {step} (ce={ce}, tversky={tv}); "
                    f"batch cases {[p[0] for p in batch.provenance]}")
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            sched.step()
            trace.append(TraceRow(step, ce, tv, total))
    net.eval()
    return net, trace


def write_trace_csv(path, trace: list[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_CE", "L_T", "L_SEG"])
        for r in trace:
            w.writerow([r.step, repr(r.ce), repr(r.tversky), repr(r.seg)])


def smoothed(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    n = len(v) // window
    return v[: n * window].reshape(n, window).mean(axis=1)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def _window_starts(n: int, size: int) -> list[int]:
    if n <= size:
        return [0]
    step = max(1, size // 2)
    starts = list(range(0, n - size + 1, step))
    if starts[-1] != n - size:
        starts.append(n - size)
    return starts


def predict_probabilities(net: MicroNet, image: np.ndarray, attention: np.ndarray | None,
                          window=(64, 64, 64)) -> np.ndarray:
    """Stitched foreground probability over the full volume.

    Windows overlap by half their size and are blended uniformly.  Volumes
    smaller than the window are zero-padded up to it.
    """
    if image.ndim == 3:
        image = image[None]
    dims = image.shape[1:]
    size = [min(int(w), n + (n % 2)) if n < w else int(w) for w, n in zip(window, dims)]
    size = [s + (s % 2) for s in size]
    pad = [max(0, s - n) for s, n in zip(size, dims)]
    img = np.pad(image, [(0, 0)] + [(0, p) for p in pad])
    att = None if attention is None else np.pad(attention, [(0, p) for p in pad])
    full = img.shape[1:]
    acc = np.zeros(full, dtype=np.float64)
    cnt = np.zeros(full, dtype=np.float64)
    starts = [_window_starts(n, s) for n, s in zip(full, size)]
    net.eval()
    with torch.no_grad():
        for sx, sy, sz in itertools.product(*starts):
            sl = (slice(sx, sx + size[0]), slice(sy, sy + size[1]), slice(sz, sz + size[2]))
            x = torch.from_numpy(np.ascontiguousarray(img[(slice(None),) + sl], dtype=np.float32))[None]
            a = None
            if att is not None:
                a = attention_pyramid(torch.from_numpy(np.ascontiguousarray(att[sl], dtype=np.float32))[None])
            logits = net(x, a)[0]
            prob = torch.softmax(logits, dim=1)[0, 1].double().numpy()
            acc[sl] += prob
            cnt[sl] += 1.0
    prob = acc / cnt
    return prob[: dims[0], : dims[1], : dims[2]]


def infer_segmentation(net: MicroNet, image: np.ndarray, attention: np.ndarray | None,
                       window=(64, 64, 64)) -> np.ndarray:
    """Binary LN mask: foreground only where p1 > p0 (ties go to background)."""
    prob = predict_probabilities(net, image, attention, window)
    return (prob > 0.5).astype(np.uint8)

"""Patch sampling with a foreground quota and informative negative selection.

Randomness is counter based: every slot of every batch draws from its own
generator seeded by ``(seed, batch_counter, slot)``, so a batch is a pure
function of its inputs no matter how slots are scheduled across threads.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateDataError, InputError
from .volume import crop_array

log = logging.getLogger(__name__)


def more_than_third(batch_size: int) -> int:
    return batch_size // 3 + 1


QUOTA_RULES = {
    "more_than_third": more_than_third,
    "none": lambda b: 0,
}


@dataclass(frozen=True)
class SamplerConfig:
    patch_shape: tuple[int, int, int] = (32, 32, 32)
    batch_size: int = 4
    foreground_quota_rule: str = "more_than_third"
    seed: int = 0
    informative: bool = True
    max_redraws: int = 100
    pad: str = "zero"

    def __post_init__(self):
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.foreground_quota_rule not in QUOTA_RULES:
            raise InputError(f"unknown quota rule {self.foreground_quota_rule!r}")
        if self.quota > self.batch_size:
            raise InputError("foreground quota exceeds batch size")
        if len(self.patch_shape) != 3 or min(self.patch_shape) < 1:
            raise InputError("patch_shape must be three positive ints")

    @property
    def quota(self) -> int:
        return QUOTA_RULES[self.foreground_quota_rule](self.batch_size)


@dataclass(eq=False)
class SampleCase:
    """Aligned arrays for one training case.

    ``image`` is ``(C, W, H, D)``; ``label`` and ``attention`` are ``(W, H, D)``.
    """

    case_id: str
    image: np.ndarray
    label: np.ndarray
    attention: np.ndarray

    def __post_init__(self):
        if self.image.ndim == 3:
            self.image = self.image[None]
        dims = self.label.shape
        if self.image.shape[1:] != dims or self.attention.shape != dims:
            raise InputError(f"case {self.case_id}: image/label/attention grids differ")

    @property
    def dims(self):
        return self.label.shape

    @cached_property
    def centers(self) -> "CenterSets":
        return candidate_centers(self)


@dataclass(frozen=True)
class CenterSets:
    foreground: np.ndarray
    negative: np.ndarray


def _coords_sorted(mask: np.ndarray) -> np.ndarray:
    # np.nonzero walks C order; re-sort to x-fastest linear order
    coords = np.argwhere(mask)
    if len(coords) == 0:
        return coords.reshape(0, 3)
    w, h, _ = mask.shape
    lin = coords[:, 0] + w * (coords[:, 1] + h * coords[:, 2])
    return coords[np.argsort(lin, kind="stable")]


def candidate_centers(case: SampleCase) -> CenterSets:
    fg = case.label > 0
    neg = (case.attention > 0) & ~fg
    return CenterSets(_coords_sorted(fg), _coords_sorted(neg))


def informative_center_mask(case: SampleCase, patch_shape) -> np.ndarray:
    """Boolean grid: does the patch centred at each voxel hold foreground or
    non-zero attention?  Uses a summed-area table over the patch footprint."""
    hit = ((case.attention > 0) | (case.label > 0)).astype(np.int64)
    sat = np.zeros(tuple(n + 1 for n in hit.shape), dtype=np.int64)
    sat[1:, 1:, 1:] = hit.cumsum(0).cumsum(1).cumsum(2)
    bounds = []
    for n, s in zip(hit.shape, patch_shape):
        c = np.arange(n)
        lo = np.clip(c - s // 2, 0, n)
        hi = np.clip(c - s // 2 + s, 0, n)
        bounds.append((lo, hi))
    (x0, x1), (y0, y1), (z0, z1) = bounds
    X0, Y0, Z0 = np.ix_(x0, y0, z0)
    X1, Y1, Z1 = np.ix_(x1, y1, z1)
    total = (sat[X1, Y1, Z1] - sat[X0, Y1, Z1] - sat[X1, Y0, Z1] - sat[X1, Y1, Z0]
             + sat[X0, Y0, Z1] + sat[X0, Y1, Z0] + sat[X1, Y0, Z0] - sat[X0, Y0, Z0])
    return total > 0


def patch_is_informative(case: SampleCase, center, patch_shape) -> bool:
    att = crop_array(case.attention, center, patch_shape)
    if att.max() > 0:
        return True
    return bool(crop_array(case.label, center, patch_shape).any())


@dataclass
class SampleBatch:
    images: np.ndarray
    labels: np.ndarray
    attention: np.ndarray
    provenance: list = field(default_factory=list)

    @property
    def has_foreground(self) -> np.ndarray:
        return self.labels.reshape(len(self.labels), -1).any(axis=1)


def eligible_cases(cases, cfg: SamplerConfig) -> list[SampleCase]:
    if not cfg.informative:
        return list(cases)
    keep = []
    for c in cases:
        cs = c.centers
        if len(cs.foreground) == 0 and len(cs.negative) == 0:
            log.warning("case %s has no foreground and no attention; excluded from sampling", c.case_id)
            continue
        keep.append(c)
    return keep


def _slot_rng(seed: int, counter: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, counter, slot]))


def _draw_slot(cases, fg_cases, cfg: SamplerConfig, counter: int, slot: int):
    rng = _slot_rng(cfg.seed, counter, slot)
    if slot < cfg.quota:
        case = fg_cases[rng.integers(len(fg_cases))]
        fg = case.centers.foreground
        return case, tuple(int(v) for v in fg[rng.integers(len(fg))]), "foreground"

    for _ in range(cfg.max_redraws):
        case = cases[rng.integers(len(cases))]
        center = tuple(int(rng.integers(n)) for n in case.dims)
        if not cfg.informative or patch_is_informative(case, center, cfg.patch_shape):
            return case, center, "random"
    # bounded rejection: fall back to a precomputed informative centre
    case = cases[rng.integers(len(cases))]
    pool = case.centers.negative if len(case.centers.negative) else case.centers.foreground
    return case, tuple(int(v) for v in pool[rng.integers(len(pool))]), "fallback"


def sample_batch(cases, cfg: SamplerConfig, counter: int = 0, threads: int = 1) -> SampleBatch:
    """Draw ``cfg.batch_size`` patches; the first ``cfg.quota`` are centred on LN voxels."""
    pool = eligible_cases(cases, cfg)
    if not pool:
        raise DegenerateDataError("every case was excluded: no foreground and no informative voxels")
    fg_cases = [c for c in pool if len(c.centers.foreground)]
    if cfg.quota and not fg_cases:
        raise DegenerateDataError("foreground quota requested but no case contains foreground")

    def draw(slot):
        case, center, kind = _draw_slot(pool, fg_cases, cfg, counter, slot)
        img = crop_array(case.image, center, cfg.patch_shape, cfg.pad)
        lab = crop_array(case.label, center, cfg.patch_shape, "zero")
        att = crop_array(case.attention, center, cfg.patch_shape, "zero")
        return img, lab, att, (case.case_id, center, kind)

    slots = range(cfg.batch_size)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(draw, slots))
    else:
        parts = [draw(s) for s in slots]
    return SampleBatch(
        images=np.stack([p[0] for p in parts]),
        labels=np.stack([p[1] for p in parts]),
        attention=np.stack([p[2] for p in parts]),
        provenance=[p[3] for p in parts],
    )


def write_provenance_csv(path, batches) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "slot", "case_id", "cx", "cy", "cz", "kind", "has_foreground", "max_attention"])
        for b, batch in enumerate(batches):
            fg = batch.has_foreground
            amax = batch.attention.reshape(len(batch.attention), -1).max(axis=1)
            for s, (case_id, center, kind) in enumerate(batch.provenance):
                w.writerow([b, s, case_id, *center, kind, int(fg[s]), f"{amax[s]:.6g}"])

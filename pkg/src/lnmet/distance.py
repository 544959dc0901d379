"""Signed distance maps and distance-guided attention.

Distances are exact Euclidean distances between voxel centres in mm.  The
transform is separable: a 1-D squared-distance pass per axis, each computed
as the lower envelope of parabolas (Felzenszwalb & Huttenlocher), which is
exact for anisotropic spacing because the per-axis weights enter the
parabolas directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import DegenerateDataError, InputError
from .volume import LabelVolume, ScalarVolume, Spacing

log = logging.getLogger(__name__)

# Sentinel magnitude for "no structure present".
DISTANCE_CAP = 1.0e6

STRUCTURES = (
    "spleen",
    "esophagus",
    "stomach",
    "aorta",
    "pancreas",
    "duodenum",
    "sma",
    "tc_sa",
    "lga",
    "cha_pha",
)


# ---------------------------------------------------------------------------
# exact squared EDT
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _envelope_lines(f, step, out):
    n_lines, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for line in range(n_lines):
        row = f[line]
        k = -1
        for q in range(n):
            fq = row[q]
            if fq == np.inf:
                continue
            xq = q * step
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                xp = p * step
                s = ((fq + xq * xq) - (row[p] + xp * xp)) / (2.0 * (xq - xp))
                if s <= z[k]:
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
            else:
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = np.inf
        if k < 0:
            for q in range(n):
                out[line, q] = np.inf
            continue
        j = 0
        for q in range(n):
            xq = q * step
            while z[j + 1] < xq:
                j += 1
            p = v[j]
            dx = xq - p * step
            out[line, q] = dx * dx + row[p]


def squared_edt(features: np.ndarray, spacing) -> np.ndarray:
    """Squared distance (mm^2) from every voxel to the nearest ``features`` voxel.

    Voxels with no feature anywhere in the grid come back as ``inf``.
    """
    sp = Spacing.of(spacing).as_tuple()
    g = np.where(np.asarray(features, dtype=bool), 0.0, np.inf)
    for axis in range(3):
        moved = np.moveaxis(g, axis, -1)
        shape = moved.shape
        lines = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
        out = np.empty_like(lines)
        _envelope_lines(lines, float(sp[axis]), out)
        g = np.moveaxis(out.reshape(shape), -1, axis)
    return np.ascontiguousarray(g)


# ---------------------------------------------------------------------------
# signed distance maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Signed distance in mm: positive outside the structure, negative inside."""

    data: np.ndarray
    spacing: Spacing
    empty: bool = False

    @property
    def dims(self):
        return tuple(self.data.shape)


def signed_distance(mask: np.ndarray, spacing) -> tuple[np.ndarray, bool]:
    """Signed distance for a boolean mask; returns ``(distances, empty_flag)``.

    Voxels beyond the grid count as background, one voxel-spacing past the
    outermost layer, so a structure touching the border still has a finite
    interior distance.
    """
    fg = np.asarray(mask, dtype=bool)
    if not fg.any():
        return np.full(fg.shape, DISTANCE_CAP), True
    outside = np.sqrt(squared_edt(fg, spacing))
    padded_bg = np.pad(~fg, 1, constant_values=True)
    inside = np.sqrt(squared_edt(padded_bg, spacing))[1:-1, 1:-1, 1:-1]
    sd = np.where(fg, -inside, outside)
    return np.minimum(sd, DISTANCE_CAP), False


def signed_distance_transform(mask: LabelVolume, label: int, spacing=None) -> DistanceMap:
    spacing = mask.spacing if spacing is None else Spacing.of(spacing)
    data, empty = signed_distance(mask.data == label, spacing)
    if empty:
        log.warning("structure label %d absent; distance map capped at %g mm", label, DISTANCE_CAP)
    return DistanceMap(data, spacing, empty)


def structure_distance_maps(organs: LabelVolume, n_structures: int = len(STRUCTURES)) -> list[DistanceMap]:
    return [signed_distance_transform(organs, i + 1) for i in range(n_structures)]


# ---------------------------------------------------------------------------
# trapezoid mapping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrapezoidParams:
    d_min: float
    d_max: float
    smooth: float = 3.0
    enabled: bool = True

    def __post_init__(self):
        if self.enabled:
            if not (math.isfinite(self.d_min) and math.isfinite(self.d_max)):
                raise InputError("d_min/d_max must be finite")
            if self.d_min > self.d_max:
                raise InputError(f"d_min {self.d_min} exceeds d_max {self.d_max}")
        if not self.smooth > 0:
            raise InputError("smooth border must be > 0")

    @classmethod
    def disabled(cls, smooth: float = 3.0) -> "TrapezoidParams":
        return cls(math.nan, math.nan, smooth, enabled=False)


# Shipped defaults (mm), one row per structure in STRUCTURES order.
DEFAULT_PARAMS = {
    "spleen": TrapezoidParams(0, 16),
    "esophagus": TrapezoidParams(0, 25),
    "stomach": TrapezoidParams(-2, 18),
    "aorta": TrapezoidParams(0, 28),
    "pancreas": TrapezoidParams(-5, 20),
    "duodenum": TrapezoidParams(-5, 22),
    "sma": TrapezoidParams(-1, 20),
    "tc_sa": TrapezoidParams(-2, 18),
    "lga": TrapezoidParams(0, 21),
    "cha_pha": TrapezoidParams(0, 20),
}


def trapezoid(d, p: TrapezoidParams) -> np.ndarray:
    """Element-wise isosceles-trapezoid mapping of distances to [0, 1]."""
    d = np.asarray(d, dtype=np.float64)
    if not p.enabled:
        return np.zeros_like(d)
    up = (d - p.d_min + p.smooth) / p.smooth
    down = -(d - p.d_max - p.smooth) / p.smooth
    out = np.clip(np.minimum(up, down), 0.0, 1.0)
    # the plateau is closed; clipping already returns exactly 1.0 there
    return out


def trapezoid_map(dmap: DistanceMap, p: TrapezoidParams) -> ScalarVolume:
    return ScalarVolume(trapezoid(dmap.data, p), dmap.spacing)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def calibrate_params(ln_masks, distance_maps, names=STRUCTURES, smooth: float = 3.0) -> dict[str, TrapezoidParams]:
    """Derive (d_min, d_max) per structure from ground-truth LN voxels.

    ``ln_masks`` is one boolean/label array per case; ``distance_maps`` is,
    per case, a sequence of signed-distance arrays (or DistanceMaps), one per
    structure.  Each LN voxel is assigned to the structure with the smallest
    signed distance (lowest index on ties); the range of assigned distances
    becomes that structure's plateau.
    """
    lo = np.full(len(names), np.inf)
    hi = np.full(len(names), -np.inf)
    total = 0
    for mask, dmaps in zip(ln_masks, distance_maps):
        sel = np.asarray(mask) > 0
        n = int(sel.sum())
        if n == 0:
            continue
        if len(dmaps) != len(names):
            raise InputError(f"expected {len(names)} distance maps per case, got {len(dmaps)}")
        total += n
        stack = np.stack([np.asarray(getattr(m, "data", m))[sel] for m in dmaps])
        owner = np.argmin(stack, axis=0)
        dist = stack[owner, np.arange(n)]
        np.minimum.at(lo, owner, dist)
        np.maximum.at(hi, owner, dist)
    if total == 0:
        raise DegenerateDataError("no ground-truth LN voxels available for calibration")
    out = {}
    for i, name in enumerate(names):
        if np.isfinite(lo[i]):
            out[name] = TrapezoidParams(float(lo[i]), float(hi[i]), smooth)
        else:
            out[name] = TrapezoidParams.disabled(smooth)
    return out


def save_params(path, params: dict[str, TrapezoidParams]) -> None:
    lines = ["# structure\td_min\td_max\tsmooth"]
    for name, p in params.items():
        if p.enabled:
            lines.append(f"{name}\t{p.d_min!r}\t{p.d_max!r}\t{p.smooth!r}")
        else:
            lines.append(f"{name}\tnan\tnan\t{p.smooth!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> dict[str, TrapezoidParams]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InputError(f"{path}:{n}: expected 4 columns, got {len(parts)}")
        name, d_min, d_max, smooth = parts[0], float(parts[1]), float(parts[2]), float(parts[3])
        if math.isnan(d_min) or math.isnan(d_max):
            out[name] = TrapezoidParams.disabled(smooth)
        else:
            out[name] = TrapezoidParams(d_min, d_max, smooth)
    return out


def default_params_path() -> Path:
    return Path(__file__).with_name("data") / "default_params.tsv"


# ---------------------------------------------------------------------------
# fusion and pooling
# ---------------------------------------------------------------------------

def fuse_attention(maps, organ_mask) -> np.ndarray:
    """Combine per-structure attention: voxel-wise max outside every structure,
    the structure's own score inside it.

    ``maps[i]`` belongs to organ label ``i + 1``.
    """
    arrays = [np.asarray(getattr(m, "data", m), dtype=np.float64) for m in maps]
    labels = np.asarray(getattr(organ_mask, "data", organ_mask))
    if not arrays:
        raise InputError("no attention maps to fuse")
    for a in arrays:
        if a.shape != labels.shape:
            raise InputError(f"attention map shape {a.shape} != organ mask shape {labels.shape}")
    if labels.max(initial=0) > len(arrays):
        raise InputError("organ mask holds labels without a matching attention map")
    stack = np.stack(arrays)
    fused = stack.max(axis=0)
    inside = labels > 0
    if inside.any():
        idx = labels[inside].astype(np.int64) - 1
        fused[inside] = stack[(idx,) + np.nonzero(inside)]
    return fused


def attention_from_organs(organs: LabelVolume, params: dict[str, TrapezoidParams],
                          names=STRUCTURES, distance_maps=None) -> ScalarVolume:
    """Organ mask -> fused attention map in one call."""
    if distance_maps is None:
        distance_maps = structure_distance_maps(organs, len(names))
    maps = [trapezoid(dm.data if hasattr(dm, "data") else dm, params[name])
            for dm, name in zip(distance_maps, names)]
    return ScalarVolume(fuse_attention(maps, organs), organs.spacing)


def downsample_attention(a: np.ndarray, factors) -> np.ndarray:
    """Block-max pooling; ragged trailing blocks are padded with zeros."""
    a = np.asarray(getattr(a, "data", a))
    factors = tuple(int(f) for f in factors)
    if len(factors) != 3 or min(factors) < 1:
        raise InputError("pooling factors must be three ints >= 1")
    if factors == (1, 1, 1):
        return a.copy()
    out_dims = [-(-n // f) for n, f in zip(a.shape, factors)]
    pad = [(0, o * f - n) for o, f, n in zip(out_dims, factors, a.shape)]
    p = np.pad(a, pad, constant_values=0)
    blocks = p.reshape(out_dims[0], factors[0], out_dims[1], factors[1], out_dims[2], factors[2])
    return blocks.max(axis=(1, 3, 5))

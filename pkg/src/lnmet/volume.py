"""Volume containers and the geometric operations built on them.

Arrays are indexed ``[x, y, z]`` with shape ``(W, H, D)``.  Linear voxel
indices follow x-fastest order, ``x + W * (y + H * z)``, which is also the
on-disk payload order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import InputError


@dataclass(frozen=True)
class Spacing:
    """Physical voxel edge lengths in millimetres."""

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for v in (self.dx, self.dy, self.dz):
            if not (math.isfinite(v) and v > 0):
                raise InputError(f"spacing components must be finite and > 0, got {self}")

    @classmethod
    def of(cls, values) -> "Spacing":
        if isinstance(values, Spacing):
            return values
        dx, dy, dz = (float(v) for v in values)
        return cls(dx, dy, dz)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    @property
    def voxel_volume(self) -> float:
        return self.dx * self.dy * self.dz


MEDIAN_SPACING = Spacing(0.68, 0.68, 0.80)
CLINICAL_PATCH_SHAPE = (160, 192, 80)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InputError(f"volume data must be 3-D, got shape {data.shape}")
        # stored as float32, the precision of the on-disk format
        data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise InputError("scalar volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InputError(f"volume data must be 3-D, got shape {data.shape}")
        if data.dtype == bool:
            data = data.astype(np.uint8)
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(data == np.round(data)):
                raise InputError("label volume requires integer labels")
            data = data.astype(np.int64)
        if data.size and data.min() < 0:
            raise InputError("labels must be non-negative")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def labels(self) -> np.ndarray:
        return np.unique(self.data)


@dataclass(frozen=True)
class PatchSpec:
    center: tuple[int, int, int]
    shape: tuple[int, int, int]

    def __post_init__(self):
        if len(self.shape) != 3 or any(int(s) <= 0 for s in self.shape):
            raise InputError(f"patch shape must be three positive ints, got {self.shape}")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def start(self) -> tuple[int, int, int]:
        return tuple(c - s // 2 for c, s in zip(self.center, self.shape))


def linear_index(coords, dims) -> np.ndarray:
    """x-fastest linear index of integer coordinates shaped ``(..., 3)``."""
    coords = np.asarray(coords, dtype=np.int64)
    w, h, _ = dims
    return coords[..., 0] + w * (coords[..., 1] + h * coords[..., 2])


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _axis_coords(n_in: int, s_in: float, s_out: float) -> tuple[int, np.ndarray]:
    n_out = max(1, int(round(n_in * s_in / s_out)))
    # origin at the first voxel centre; positions past the last centre clamp
    pos = np.arange(n_out, dtype=np.float64) * (s_out / s_in)
    return n_out, np.clip(pos, 0.0, n_in - 1)


def resample(vol, target, mode: Literal["linear", "nearest"] = "linear"):
    """Resample a volume onto a grid with ``target`` spacing.

    Output voxel ``j`` sits at physical offset ``j * target`` from the first
    input voxel centre, so every input centre that lands on the output grid is
    reproduced exactly.
    """
    target = Spacing.of(target)
    if mode not in ("linear", "nearest"):
        raise InputError(f"unknown resampling mode {mode!r}")
    if isinstance(vol, LabelVolume) and mode == "linear":
        raise InputError("linear interpolation is not defined for label volumes")

    axes = [_axis_coords(n, si, so) for n, si, so in
            zip(vol.dims, vol.spacing.as_tuple(), target.as_tuple())]
    src = vol.data

    if mode == "nearest":
        idx = [np.clip(np.floor(c + 0.5).astype(np.int64), 0, n - 1)
               for (_, c), n in zip(axes, vol.dims)]
        out = src[np.ix_(*idx)]
        return type(vol)(out, target)

    out = src.astype(np.float64)
    for axis, ((_, c), n) in enumerate(zip(axes, vol.dims)):
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        t = c - lo
        shape = [1, 1, 1]
        shape[axis] = -1
        t = t.reshape(shape)
        out = np.take(out, lo, axis=axis) * (1.0 - t) + np.take(out, hi, axis=axis) * t
    return ScalarVolume(out.astype(src.dtype), target)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def crop_array(arr: np.ndarray, center, shape, pad: Literal["zero", "clamp"] = "zero") -> np.ndarray:
    """Crop the trailing three axes of ``arr`` around ``center``.

    Leading axes (channels, batch) are carried along untouched.
    """
    spec = PatchSpec(tuple(center), tuple(shape))
    dims = arr.shape[-3:]
    idx, valid = [], []
    for st, s, n in zip(spec.start, spec.shape, dims):
        i = np.arange(st, st + s)
        valid.append((i >= 0) & (i < n))
        idx.append(np.clip(i, 0, n - 1))
    out = arr[(Ellipsis,) + np.ix_(*idx)]
    if pad == "zero":
        inside = valid[0][:, None, None] & valid[1][None, :, None] & valid[2][None, None, :]
        if not inside.all():
            out = np.where(inside, out, np.zeros((), dtype=arr.dtype))
    elif pad != "clamp":
        raise InputError(f"unknown pad policy {pad!r}")
    return np.ascontiguousarray(out)


def crop_patch(vol, spec: PatchSpec, pad: Literal["zero", "clamp"] = "zero"):
    return type(vol)(crop_array(vol.data, spec.center, spec.shape, pad), vol.spacing)


def paste_array(patch: np.ndarray, center, dims, out: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`crop_array`: write the in-bounds part of a patch back."""
    spec = PatchSpec(tuple(center), patch.shape[-3:])
    if out is None:
        out = np.zeros(patch.shape[:-3] + tuple(dims), dtype=patch.dtype)
    dst, src = [], []
    for st, s, n in zip(spec.start, spec.shape, dims):
        a, b = max(st, 0), min(st + s, n)
        if a >= b:
            return out
        dst.append(slice(a, b))
        src.append(slice(a - st, b - st))
    out[(Ellipsis, *dst)] = patch[(Ellipsis, *src)]
    return out


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def label_components(mask: np.ndarray, connectivity: int = 26) -> tuple[np.ndarray, int]:
    """Label a binary array; IDs ascend with each component's minimal linear index."""
    if connectivity not in _STRUCTURES:
        raise InputError("connectivity must be 6 or 26")
    lab, k = ndimage.label(np.asarray(mask) != 0, structure=_STRUCTURES[connectivity])
    if k == 0:
        return lab.astype(np.int32), 0
    flat = lab.ravel(order="F")
    ids, first = np.unique(flat, return_index=True)
    first, ids = first[ids > 0], ids[ids > 0]
    remap = np.zeros(k + 1, dtype=np.int32)
    remap[ids[np.argsort(first, kind="stable")]] = np.arange(1, k + 1, dtype=np.int32)
    return remap[lab], int(k)


def connected_components(mask: LabelVolume, connectivity: int = 26) -> LabelVolume:
    if not np.isin(mask.labels, (0, 1)).all():
        raise InputError("connected_components expects a binary {0,1} mask")
    lab, _ = label_components(mask.data, connectivity)
    return LabelVolume(lab, mask.spacing)


def volume_mm3(component, spacing) -> float:
    """Physical volume of a voxel set.

    ``component`` may be a boolean mask, an ``(N, 3)`` coordinate array or a
    plain voxel count.
    """
    spacing = Spacing.of(spacing)
    if np.isscalar(component):
        n = int(component)
    else:
        arr = np.asarray(component)
        n = int(arr.sum()) if arr.dtype == bool else int(arr.reshape(-1, 3).shape[0])
    if n <= 0:
        raise InputError("volume of an empty component is undefined")
    return n * spacing.voxel_volume

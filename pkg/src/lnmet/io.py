"""Volume file formats.

``.mvol`` is the native format: a 64-byte little-endian header followed by
the raw x-fastest payload::

    offset  size  field
    0       4     magic b"MVOL"
    4       1     kind (0 = scalar float32, 1 = label uint16)
    5       12    W, H, D as uint32
    17      24    dx, dy, dz as float64
    41      23    reserved, zero

NIfTI-1 single-frame, axis-aligned files can be imported (optionally gzip
wrapped).
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .errors import InputError
from .volume import LabelVolume, ScalarVolume, Spacing

MVOL_MAGIC = b"MVOL"
_MVOL_HEADER = struct.Struct("<4sB3I3d23x")
assert _MVOL_HEADER.size == 64

KIND_SCALAR = 0
KIND_LABEL = 1


def save_mvol(path, vol) -> None:
    if isinstance(vol, ScalarVolume):
        kind, payload = KIND_SCALAR, vol.data.astype("<f4")
    elif isinstance(vol, LabelVolume):
        if vol.data.size and vol.data.max() > np.iinfo(np.uint16).max:
            raise InputError("label values exceed the uint16 range of .mvol")
        kind, payload = KIND_LABEL, vol.data.astype("<u2")
    else:
        raise TypeError(f"cannot save {type(vol).__name__} as .mvol")
    header = _MVOL_HEADER.pack(MVOL_MAGIC, kind, *vol.dims, *vol.spacing.as_tuple())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="F"))
    os.replace(tmp, path)


def load_mvol(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 64:
        raise InputError(f"{path}: truncated .mvol header")
    magic, kind, w, h, d, dx, dy, dz = _MVOL_HEADER.unpack_from(raw)
    if magic != MVOL_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    dtype = {KIND_SCALAR: "<f4", KIND_LABEL: "<u2"}.get(kind)
    if dtype is None:
        raise InputError(f"{path}: unknown volume kind {kind}")
    count = w * h * d
    if len(raw) != 64 + count * np.dtype(dtype).itemsize:
        raise InputError(f"{path}: payload size does not match header dims")
    payload = np.frombuffer(raw, dtype=dtype, count=count, offset=64)
    data = payload.reshape((w, h, d), order="F")
    spacing = Spacing(dx, dy, dz)
    if kind == KIND_SCALAR:
        return ScalarVolume(data.astype(np.float32), spacing)
    return LabelVolume(data.astype(np.uint16), spacing)


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

NIFTI_DTYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    512: "u2",
}


def _read_maybe_gzip(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_nifti_header(raw: bytes) -> dict:
    if len(raw) < 348:
        raise InputError("file too short for a NIfTI-1 header")
    for endian in "<>":
        if struct.unpack_from(endian + "i", raw, 0)[0] == 348:
            break
    else:
        raise InputError("sizeof_hdr is not 348; not a NIfTI-1 file")
    e = endian
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise InputError(f"unsupported NIfTI magic {magic!r}")
    hdr = {
        "endian": e,
        "dim": struct.unpack_from(e + "8h", raw, 40),
        "datatype": struct.unpack_from(e + "h", raw, 70)[0],
        "bitpix": struct.unpack_from(e + "h", raw, 72)[0],
        "pixdim": struct.unpack_from(e + "8f", raw, 76),
        "vox_offset": struct.unpack_from(e + "f", raw, 108)[0],
        "scl_slope": struct.unpack_from(e + "f", raw, 112)[0],
        "scl_inter": struct.unpack_from(e + "f", raw, 116)[0],
        "qform_code": struct.unpack_from(e + "h", raw, 252)[0],
        "sform_code": struct.unpack_from(e + "h", raw, 254)[0],
        "quatern": struct.unpack_from(e + "3f", raw, 256),
        "srow": np.array(struct.unpack_from(e + "12f", raw, 280)).reshape(3, 4),
        "single_file": magic == b"n+1\x00",
    }
    return hdr


def _check_axis_aligned(hdr) -> None:
    if hdr["qform_code"] > 0:
        b, c, d = hdr["quatern"]
        if max(abs(b), abs(c), abs(d)) > 1e-6:
            raise InputError("rotated qform grids are not supported")
    if hdr["sform_code"] > 0:
        lin = hdr["srow"][:, :3]
        off = lin - np.diag(np.diag(lin))
        if np.abs(off).max() > 1e-6 * max(1.0, np.abs(lin).max()):
            raise InputError("rotated or sheared sform grids are not supported")


def load_nifti(path, kind: str = "auto"):
    """Import a NIfTI-1 volume as a ScalarVolume or LabelVolume.

    ``kind='auto'`` yields a LabelVolume for unscaled integer data and a
    ScalarVolume otherwise.  Paired ``.hdr/.img`` files are not supported.
    """
    raw = _read_maybe_gzip(path)
    hdr = parse_nifti_header(raw)
    if not hdr["single_file"]:
        raise InputError("only single-file (n+1) NIfTI is supported")
    dim = hdr["dim"]
    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise InputError(f"expected a 3-D volume, dim[0] = {ndim}")
    if any(n > 1 for n in dim[4:ndim + 1]):
        raise InputError("multi-frame NIfTI is not supported")
    w, h, d = (int(n) for n in dim[1:4])
    if min(w, h, d) < 1:
        raise InputError(f"invalid dims {dim[1:4]}")
    code = hdr["datatype"]
    if code not in NIFTI_DTYPES:
        raise InputError(f"unsupported NIfTI datatype {code}")
    _check_axis_aligned(hdr)

    dtype = np.dtype(hdr["endian"] + NIFTI_DTYPES[code])
    offset = int(hdr["vox_offset"])
    count = w * h * d
    if len(raw) < offset + count * dtype.itemsize:
        raise InputError("NIfTI payload shorter than header dims")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape((w, h, d), order="F")
    spacing = Spacing(*(abs(float(p)) for p in hdr["pixdim"][1:4]))

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    scaled = np.isfinite(slope) and slope != 0 and (slope != 1 or inter != 0)
    if kind == "auto":
        kind = "label" if (np.issubdtype(dtype, np.integer) and not scaled) else "scalar"
    if kind == "label":
        if scaled:
            raise InputError("scaled NIfTI data cannot be imported as labels")
        return LabelVolume(data.astype(np.int64), spacing)
    if kind != "scalar":
        raise InputError(f"unknown volume kind {kind!r}")
    values = data.astype(np.float64)
    if scaled:
        values = values * slope + inter
    return ScalarVolume(values.astype(np.float32), spacing)


def load_volume(path, kind: str = "auto"):
    p = str(path)
    if p.endswith(".mvol"):
        return load_mvol(p)
    if p.endswith((".nii", ".nii.gz")):
        return load_nifti(p, kind)
    raise InputError(f"unrecognised volume extension: {p}")

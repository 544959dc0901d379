"""Deterministic synthetic cohort of abdominal-like volumes.

Organs are ellipsoids and vessels are tubes swept along polylines, laid out
in a fixed millimetre frame and jittered per case.  Lymph nodes are
ellipsoidal blobs whose every voxel sits inside the distance band of its
nearest structure; LN-like distractor blobs are dropped where the shipped
attention prior is zero so that anatomical context is the only cue that
separates them from true nodes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .distance import DEFAULT_PARAMS, STRUCTURES, fuse_attention, signed_distance, trapezoid
from .errors import InputError
from .io import save_mvol, load_mvol
from .volume import LabelVolume, MEDIAN_SPACING, ScalarVolume, Spacing

log = logging.getLogger(__name__)

# Extent of the reference layout in mm; coordinates below are scaled to the grid.
_FRAME = (65.28, 65.28, 76.8)

# (kind, geometry, radius/radii) in the reference frame, x right->left,
# y anterior->posterior, z inferior->superior.
_LAYOUT = {
    "spleen": ("ellipsoid", (57.0, 56.0, 47.0), (7.0, 7.5, 12.0)),
    "esophagus": ("tube", [(47.0, 60.0, 76.8), (49.0, 52.0, 63.0)], 3.5),
    "stomach": ("ellipsoid", (53.0, 38.0, 60.0), (10.0, 11.0, 13.0)),
    "aorta": ("tube", [(38.0, 57.0, 0.0), (38.0, 57.0, 76.8)], 5.0),
    "pancreas": ("ellipsoid", (36.0, 38.0, 34.0), (17.0, 4.5, 5.0)),
    "duodenum": ("ellipsoid", (15.0, 37.0, 29.0), (4.5, 6.5, 11.0)),
    "sma": ("tube", [(38.0, 53.0, 38.0), (37.0, 44.0, 30.0), (36.0, 32.0, 10.0)], 2.5),
    "tc_sa": ("tube", [(38.0, 53.0, 46.0), (41.0, 46.0, 47.0), (52.0, 50.0, 46.0)], 2.0),
    "lga": ("tube", [(41.0, 46.0, 47.0), (46.0, 41.0, 55.0)], 1.5),
    "cha_pha": ("tube", [(41.0, 46.0, 47.0), (30.0, 42.0, 48.0), (20.0, 38.0, 50.0)], 2.0),
}

# Mean intensities per channel (arterial, venous); fat is the backdrop.
_FAT = (0.2, 0.2)
_INTENSITY = {
    "spleen": (0.45, 0.5),
    "esophagus": (0.6, 0.65),
    "stomach": (0.55, 0.6),
    "aorta": (1.9, 1.4),
    "pancreas": (0.7, 0.75),
    "duodenum": (0.55, 0.6),
    "sma": (1.9, 1.4),
    "tc_sa": (1.9, 1.4),
    "lga": (1.9, 1.4),
    "cha_pha": (1.9, 1.4),
}
# soft organs sit below the LN band and vessels above it, so LN look-alikes are the distractors
_LN_BASE = (1.0, 1.05)
_TUMOR_BASE = (0.6, 0.7)


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (96, 96, 96)
    spacing: tuple[float, float, float] = MEDIAN_SPACING.as_tuple()
    n_cases: int = 100
    positive_rate: float = 0.5
    # LNs per patient: base + Poisson(extra)
    neg_ln_base: int = 1
    neg_ln_extra: float = 1.5
    pos_ln_base: int = 1
    pos_ln_extra: float = 0.6
    distractors: tuple[int, int] = (2, 4)
    median_pos_mm3: float = 665.0
    median_neg_mm3: float = 300.0
    log_sigma: float = 0.55
    volume_clip: tuple[float, float] = (80.0, 2200.0)
    pos_brightness: float = 0.12
    ln_brightness_jitter: float = 0.08
    noise: float = 0.1
    texture_base: float = 0.1
    texture_signal: float = 0.2
    texture_noise: float = 0.08
    jitter_mm: float = 1.5
    max_attempts: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.n_cases < 1 or min(self.dims) < 8:
            raise InputError("phantom needs at least one case and dims >= 8")
        if not 0.0 <= self.positive_rate <= 1.0:
            raise InputError("positive_rate must lie in [0, 1]")
        if min(self.neg_ln_base, self.pos_ln_base) < 0 or self.pos_ln_base < 1:
            raise InputError("LN counts must be non-negative and positives need >= 1 node")
        Spacing.of(self.spacing)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(eq=False)
class PhantomCase:
    case_id: str
    organs: LabelVolume
    ct_a: ScalarVolume
    ct_v: ScalarVolume
    ln_gt: LabelVolume  # 1 negative LN, 2 positive LN
    tumor: LabelVolume
    metastasis: bool
    lns: list = field(default_factory=list)
    distractors: list = field(default_factory=list)
    texture: float = 0.0

    @property
    def image(self) -> np.ndarray:
        return np.stack([self.ct_a.data, self.ct_v.data])

    @property
    def spacing(self) -> Spacing:
        return self.organs.spacing


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def _grid_mm(dims, spacing):
    axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij", sparse=True)


def _scale(dims, spacing):
    return np.array([n * s for n, s in zip(dims, spacing)]) / np.array(_FRAME)


def _ellipsoid_mask(grid, center, radii):
    x, y, z = grid
    return (((x - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2) <= 1.0


def _tube_mask(grid, points, radius):
    x, y, z = grid
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape, z.shape), dtype=bool)
    for a, b in zip(points[:-1], points[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        ab = b - a
        t = ((x - a[0]) * ab[0] + (y - a[1]) * ab[1] + (z - a[2]) * ab[2]) / float(ab @ ab)
        t = np.clip(t, 0.0, 1.0)
        d2 = (x - a[0] - t * ab[0]) ** 2 + (y - a[1] - t * ab[1]) ** 2 + (z - a[2] - t * ab[2]) ** 2
        out |= d2 <= radius ** 2
    return out


def build_organs(dims, spacing, rng: np.random.Generator | None = None, jitter_mm: float = 0.0) -> np.ndarray:
    """Organ/vessel label map, labels 1..10 in :data:`STRUCTURES` order."""
    grid = _grid_mm(dims, spacing)
    scale = _scale(dims, spacing)
    shift = rng.normal(0.0, jitter_mm, 3) if rng is not None else np.zeros(3)
    out = np.zeros(dims, dtype=np.uint8)
    # organs first, vessels painted on top
    order = sorted(range(len(STRUCTURES)), key=lambda i: _LAYOUT[STRUCTURES[i]][0] == "tube")
    for i in order:
        kind, geom, size = _LAYOUT[STRUCTURES[i]]
        if kind == "ellipsoid":
            c = np.asarray(geom) * scale + shift
            grow = rng.uniform(0.92, 1.08, 3) if rng is not None else np.ones(3)
            mask = _ellipsoid_mask(grid, c, np.asarray(size) * scale * grow)
        else:
            pts = [np.asarray(p) * scale + shift for p in geom]
            r = size * float(scale.min()) * (rng.uniform(0.9, 1.1) if rng is not None else 1.0)
            mask = _tube_mask(grid, pts, max(r, 0.75 * max(spacing)))
        out[mask] = i + 1
    return out


def _ellipsoid_offsets(volume_mm3, spacing, rng):
    r = (3.0 * volume_mm3 / (4.0 * math.pi)) ** (1.0 / 3.0)
    f = rng.uniform(0.8, 1.25, 3)
    radii = r * f / np.prod(f) ** (1.0 / 3.0)
    half = [int(math.ceil(rad / s)) + 1 for rad, s in zip(radii, spacing)]
    ax = [np.arange(-h, h + 1) for h in half]
    gx, gy, gz = np.meshgrid(*ax, indexing="ij")
    inside = ((gx * spacing[0] / radii[0]) ** 2 + (gy * spacing[1] / radii[1]) ** 2
              + (gz * spacing[2] / radii[2]) ** 2) <= 1.0
    return np.stack([gx[inside], gy[inside], gz[inside]], axis=1)


class _Placer:
    """Rejection placement of non-touching blobs on a voxel grid."""

    def __init__(self, dims, rng):
        self.dims = np.asarray(dims)
        self.rng = rng
        self.blocked = np.zeros(dims, dtype=bool)

    def try_place(self, offsets, candidates, allowed, attempts):
        if len(candidates) == 0:
            return None
        for _ in range(attempts):
            c = candidates[self.rng.integers(len(candidates))]
            vox = offsets + c
            if (vox < 1).any() or (vox >= self.dims - 1).any():
                continue
            idx = tuple(vox.T)
            if self.blocked[idx].any() or not allowed[idx].all():
                continue
            return vox
        return None

    def block(self, vox):
        # blob plus its 26-neighbourhood, so later blobs never touch it
        ring = np.stack(np.meshgrid(*[np.arange(-1, 2)] * 3, indexing="ij"), -1).reshape(-1, 3)
        grown = np.clip((vox[:, None, :] + ring[None]).reshape(-1, 3), 0, self.dims - 1)
        self.blocked[tuple(grown.T)] = True


# ---------------------------------------------------------------------------
# case generation
# ---------------------------------------------------------------------------

def _lognormal(rng, median, sigma, clip):
    return float(np.clip(median * math.exp(sigma * rng.normal()), *clip))


def _distance_stack(organs, spacing) -> np.ndarray:
    return np.stack([signed_distance(organs == i + 1, spacing)[0].astype(np.float32)
                     for i in range(len(STRUCTURES))])


def _band_masks(stack: np.ndarray):
    owner = np.argmin(stack, axis=0)
    dist = np.take_along_axis(stack, owner[None], axis=0)[0]
    lo = np.array([DEFAULT_PARAMS[s].d_min for s in STRUCTURES], dtype=np.float32)
    hi = np.array([DEFAULT_PARAMS[s].d_max for s in STRUCTURES], dtype=np.float32)
    in_band = (dist >= lo[owner]) & (dist <= hi[owner])
    return owner, dist, in_band


def _default_attention(stack, organs) -> np.ndarray:
    maps = [trapezoid(stack[i], DEFAULT_PARAMS[s]) for i, s in enumerate(STRUCTURES)]
    return fuse_attention(maps, organs)


def _smooth_field(rng, dims, sigma=1.0):
    f = ndimage.gaussian_filter(rng.normal(size=dims), sigma)
    return f / (f.std() + 1e-12)


class PlacementError(RuntimeError):
    pass


def _generate_once(cfg: PhantomConfig, index: int, metastasis: bool, rng: np.random.Generator) -> PhantomCase:
    dims, sp = tuple(cfg.dims), Spacing.of(cfg.spacing).as_tuple()
    organs = build_organs(dims, sp, rng, cfg.jitter_mm)
    for i, s in enumerate(STRUCTURES):
        if not (organs == i + 1).any():
            raise PlacementError(f"structure {s} vanished from the grid")
    stack = _distance_stack(organs, sp)
    owner, dist, in_band = _band_masks(stack)
    attention = _default_attention(stack, organs)
    placer = _Placer(dims, rng)

    # tumour inside the pancreas
    p_idx = STRUCTURES.index("pancreas")
    core = np.argwhere(stack[p_idx] <= -2.0)
    if len(core) == 0:
        raise PlacementError("pancreas too thin for a tumour")
    tumor_vol = rng.uniform(150.0, 600.0)
    t_off = _ellipsoid_offsets(tumor_vol, sp, rng)
    t_vox = placer.try_place(t_off, core, stack[p_idx] <= 3.0, cfg.max_attempts)
    if t_vox is None:
        raise PlacementError("could not place the tumour")
    placer.block(t_vox)

    # lymph nodes
    if metastasis:
        n_pos = cfg.pos_ln_base + int(rng.poisson(cfg.pos_ln_extra))
        n_neg = int(rng.poisson(cfg.neg_ln_extra))
    else:
        n_pos = 0
        n_neg = cfg.neg_ln_base + int(rng.poisson(cfg.neg_ln_extra))
    labels = [2] * n_pos + [1] * n_neg
    cand = {i: np.argwhere(in_band & (owner == i)) for i in range(len(STRUCTURES))}
    usable = [i for i in cand if len(cand[i])]
    lns = []
    for lab in labels:
        med = cfg.median_pos_mm3 if lab == 2 else cfg.median_neg_mm3
        vol = _lognormal(rng, med, cfg.log_sigma, cfg.volume_clip)
        offsets = _ellipsoid_offsets(vol, sp, rng)
        vox = None
        for _ in range(len(usable) * 3):
            s = usable[rng.integers(len(usable))]
            vox = placer.try_place(offsets, cand[s], in_band, max(1, cfg.max_attempts // 10))
            if vox is not None:
                break
        if vox is None:
            raise PlacementError(f"could not place a {vol:.0f} mm^3 node")
        placer.block(vox)
        shift = rng.normal(0.0, cfg.ln_brightness_jitter) + (cfg.pos_brightness if lab == 2 else 0.0)
        lns.append({"label": lab, "voxels": vox, "shift": shift,
                    "structure": STRUCTURES[int(np.bincount(owner[tuple(vox.T)]).argmax())]})

    # distractors: LN-like blobs where the prior is zero, in fat
    free = (attention == 0) & (organs == 0)
    free_c = np.argwhere(free)
    distractors = []
    lo, hi = cfg.distractors
    for _ in range(int(rng.integers(lo, hi + 1))):
        vol = _lognormal(rng, 0.5 * (cfg.median_pos_mm3 + cfg.median_neg_mm3), cfg.log_sigma, cfg.volume_clip)
        vox = placer.try_place(_ellipsoid_offsets(vol, sp, rng), free_c, free, cfg.max_attempts)
        if vox is None:
            log.info("case %d: no room for another distractor", index)
            break
        placer.block(vox)
        shift = rng.normal(0.0, cfg.ln_brightness_jitter) + (cfg.pos_brightness if rng.random() < 0.5 else 0.0)
        distractors.append({"voxels": vox, "shift": shift})

    # intensities
    chans = []
    texture = cfg.texture_base + cfg.texture_signal * float(metastasis) + cfg.texture_noise * rng.normal()
    texture = max(texture, 0.0)
    tex_field = _smooth_field(rng, dims)
    case_shift = rng.normal(0.0, 0.03)
    for ch in range(2):
        img = np.full(dims, _FAT[ch], dtype=np.float64)
        for i, s in enumerate(STRUCTURES):
            img[organs == i + 1] = _INTENSITY[s][ch]
        idx = tuple(t_vox.T)
        img[idx] = _TUMOR_BASE[ch] + texture * tex_field[idx]
        for blob in lns + distractors:
            img[tuple(blob["voxels"].T)] = _LN_BASE[ch] + blob["shift"]
        img += case_shift + cfg.noise * rng.normal(size=dims)
        chans.append(img.astype(np.float32))

    ln_gt = np.zeros(dims, dtype=np.uint16)
    for ln in lns:
        ln_gt[tuple(ln["voxels"].T)] = ln["label"]
    tumor = np.zeros(dims, dtype=np.uint16)
    tumor[tuple(t_vox.T)] = 1
    vv = float(np.prod(sp))
    table = [{"instance": k + 1, "label": "positive" if ln["label"] == 2 else "negative",
              "structure": ln["structure"], "n_voxels": len(ln["voxels"]),
              "volume_mm3": len(ln["voxels"]) * vv,
              "center": [int(v) for v in np.floor(ln["voxels"].mean(axis=0))]}
             for k, ln in enumerate(lns)]
    dtable = [{"n_voxels": len(d["voxels"]), "center": [int(v) for v in np.floor(d["voxels"].mean(axis=0))]}
              for d in distractors]
    return PhantomCase(
        case_id=f"case{index:04d}",
        organs=LabelVolume(organs.astype(np.uint16), sp),
        ct_a=ScalarVolume(chans[0], sp),
        ct_v=ScalarVolume(chans[1], sp),
        ln_gt=LabelVolume(ln_gt, sp),
        tumor=LabelVolume(tumor, sp),
        metastasis=bool(metastasis),
        lns=table,
        distractors=dtable,
        texture=texture,
    )


def generate_case(cfg: PhantomConfig, index: int, seed: int | None = None) -> PhantomCase:
    seed = cfg.seed if seed is None else seed
    label_rng = np.random.default_rng(np.random.SeedSequence([seed, index, 0xA11]))
    metastasis = bool(label_rng.random() < cfg.positive_rate)
    for attempt in range(16):
        rng = np.random.default_rng(np.random.SeedSequence([seed, index, attempt]))
        try:
            return _generate_once(cfg, index, metastasis, rng)
        except PlacementError as exc:
            log.warning("case %d attempt %d regenerated: %s", index, attempt, exc)
    raise InputError(f"case {index}: placement kept failing; the configuration is infeasible")


def generate_cohort(cfg: PhantomConfig, seed: int | None = None, threads: int = 1) -> list[PhantomCase]:
    """All cases of a cohort; each case depends only on ``(cfg, seed, index)``."""
    idx = range(cfg.n_cases)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda i: generate_case(cfg, i, seed), idx))
    return [generate_case(cfg, i, seed) for i in idx]


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

CASE_FILES = ("organs", "ct_a", "ct_v", "ln_gt", "tumor")


def cohort_manifest(cases, cfg: PhantomConfig, seed: int | None = None, root: str | Path = ".") -> dict:
    seed = cfg.seed if seed is None else seed
    blob = json.dumps({"config": asdict(cfg), "seed": seed}, sort_keys=True).encode()
    return {
        "generator": "lnmet.phantom",
        "inputs_sha256": hashlib.sha256(blob).hexdigest(),
        "config": asdict(cfg),
        "seed": seed,
        "n_cases": len(cases),
        "cases": [{
            "case_id": c.case_id,
            "metastasis": c.metastasis,
            "texture": c.texture,
            "files": {k: str(Path(c.case_id) / f"{k}.mvol") for k in CASE_FILES},
            "lns": c.lns,
            "distractors": c.distractors,
        } for c in cases],
    }


def write_cohort(root, cases, cfg: PhantomConfig, seed: int | None = None) -> dict:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for c in cases:
        d = root / c.case_id
        d.mkdir(exist_ok=True)
        for k in CASE_FILES:
            save_mvol(d / f"{k}.mvol", getattr(c, k))
    manifest = cohort_manifest(cases, cfg, seed, root)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_cohort(root) -> tuple[dict, list[PhantomCase]]:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise InputError(f"{root}: no manifest.json")
    manifest = json.loads(path.read_text())
    cases = []
    for entry in manifest["cases"]:
        vols = {k: load_mvol(root / entry["files"][k]) for k in CASE_FILES}
        cases.append(PhantomCase(entry["case_id"], vols["organs"], vols["ct_a"], vols["ct_v"], vols["ln_gt"],
                                 vols["tumor"], bool(entry["metastasis"]), entry["lns"], entry["distractors"],
                                 float(entry.get("texture", 0.0))))
    return manifest, cases

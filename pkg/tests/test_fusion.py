from __future__ import annotations

import csv

import numpy as np
import pytest
import torch

from lnmet.errors import DegenerateDataError, InputError
from lnmet.fusion import (N_PATCHES, FusionConfig, FusionHead, SideBranch, TextureEncoding, extract_tumor_patches,
                          fuse_and_classify, tel_encode, top_slices, train_fusion, write_prediction_csv)
from oracles import fd_gradient_check


def tel_reference(x, codewords, smoothing):
    """Loop form of the texture encoding for a single (N, C) set."""
    n, c = x.shape
    k = codewords.shape[0]
    out = np.zeros((k, c))
    for i in range(n):
        r = x[i][None] - codewords
        logits = -smoothing * (r ** 2).sum(1)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        out += w[:, None] * r
    return (out / n).ravel()


def toy_volume(seed=0, dims=(20, 22, 18)):
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(2,) + dims).astype(np.float32)
    tumor = np.zeros(dims, np.uint8)
    tumor[6:12, 8:15, 5:9] = 1
    return img, tumor


class TestPatches:
    def test_top_slices_ordering(self):
        m = np.zeros((4, 4, 5), bool)
        m[:, :, 1] = True
        m[:2, :2, 3] = True
        m[:2, :2, 4] = True
        idx, padded = top_slices(m, 2)
        assert idx == [1, 3, 4] and not padded

    def test_top_slices_padding(self):
        m = np.zeros((3, 3, 3), bool)
        m[1, 1, 1] = True
        idx, padded = top_slices(m, 0)
        assert idx == [1, 1, 1] and padded

    def test_nine_patches(self):
        img, tumor = toy_volume()
        p = extract_tumor_patches(img, tumor, 16)
        assert p.images.shape == (9, 2, 16, 16) and p.masks.shape == (9, 1, 16, 16)
        assert [s[0] for s in p.slices] == ["axial"] * 3 + ["sagittal"] * 3 + ["coronal"] * 3
        assert (p.masks.reshape(9, -1).sum(1) > 0).all()

    def test_patch_centred_on_tumor(self):
        img, tumor = toy_volume()
        p = extract_tumor_patches(img, tumor, 16)
        axial = p.masks[0, 0]
        rows, cols = np.nonzero(axial)
        assert abs(rows.mean() - 8) <= 1 and abs(cols.mean() - 8) <= 1

    def test_empty_tumor(self):
        img, tumor = toy_volume()
        with pytest.raises(DegenerateDataError):
            extract_tumor_patches(img, np.zeros_like(tumor))

    def test_grid_mismatch(self):
        img, tumor = toy_volume()
        with pytest.raises(InputError):
            extract_tumor_patches(img, tumor[:-1])


class TestTextureEncoding:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(30, 4))
        cw = rng.normal(size=(5, 4))
        sm = rng.uniform(0.5, 1.5, 5)
        np.testing.assert_allclose(tel_encode(x, cw, sm), tel_reference(x, cw, sm), atol=1e-12)

    def test_orderless(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(25, 3))
        cw = rng.normal(size=(4, 3))
        sm = np.ones(4)
        np.testing.assert_allclose(tel_encode(x, cw, sm), tel_encode(x[rng.permutation(25)], cw, sm), atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        torch.manual_seed(0)
        x = torch.randn(2, 10, 3, dtype=torch.float64, requires_grad=True)
        cw = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        sm = torch.rand(4, dtype=torch.float64).add(0.5).requires_grad_(True)
        proj = torch.randn(2, 12, dtype=torch.float64)
        worst = fd_gradient_check(lambda: (tel_encode(x, cw, sm) * proj).sum(), [x, cw, sm], rng)
        assert worst < 1e-3

    def test_module_output_size(self):
        out = TextureEncoding(6, 8)(torch.randn(3, 6, 4, 4))
        assert out.shape == (3, 48)


class TestSideBranch:
    def test_identity_at_init(self):
        f = torch.randn(2, 4, 6, 6)
        m = torch.rand(2, 1, 6, 6)
        torch.testing.assert_close(SideBranch(4)(f, m), f)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        torch.manual_seed(1)
        branch = SideBranch(3).double()
        with torch.no_grad():
            branch.conv.weight.normal_(0, 0.5)
            branch.conv.bias.uniform_(0.5, 1.5)
        f = torch.randn(2, 3, 5, 5, dtype=torch.float64, requires_grad=True)
        m = torch.rand(2, 1, 5, 5, dtype=torch.float64, requires_grad=True)
        proj = torch.randn(2, 3, 5, 5, dtype=torch.float64)
        worst = fd_gradient_check(lambda: (branch(f, m) * proj).sum(),
                                  [f, m, branch.conv.weight, branch.conv.bias], rng)
        assert worst < 1e-3

    def test_grid_mismatch(self):
        with pytest.raises(InputError):
            SideBranch(2)(torch.zeros(1, 2, 4, 4), torch.zeros(1, 1, 3, 4))


class TestFusionHead:
    def test_gradients(self):
        rng = np.random.default_rng(4)
        torch.manual_seed(2)
        head = FusionHead(2, widths=(3, 4, 4), k=3).double().eval()
        with torch.no_grad():
            head.volume_norm.running_mean.fill_(300.0)
            head.volume_norm.running_var.fill_(200.0 ** 2)
        x = torch.randn(3, 2, 8, 8, dtype=torch.float64, requires_grad=True)
        m = torch.rand(3, 1, 8, 8, dtype=torch.float64)
        v = torch.tensor([100.0, 400.0, 800.0], dtype=torch.float64)
        params = [p for p in head.parameters() if p.requires_grad]
        worst = fd_gradient_check(lambda: head.logits(x, m, v).sum(), [x] + params, rng)
        assert worst < 1e-3

    def test_zeroed_volume_path_equals_tumor_only(self):
        torch.manual_seed(0)
        head = FusionHead(2, widths=(4, 4, 4), k=4).eval()
        x = torch.randn(9, 2, 16, 16)
        m = torch.rand(9, 1, 16, 16)
        v = torch.full((9,), 750.0)
        assert not torch.equal(head(x, m, v), head(x, m, None))
        head.zero_volume_path()
        assert torch.equal(head(x, m, v), head(x, m, None))

    def test_tumor_only_variant_ignores_volume(self):
        torch.manual_seed(0)
        head = FusionHead(2, widths=(4, 4, 4), k=4, use_volume=False).eval()
        x = torch.randn(9, 2, 16, 16)
        m = torch.rand(9, 1, 16, 16)
        assert torch.equal(head(x, m, torch.full((9,), 3.0)), head(x, m, None))
        assert not any(p.requires_grad for p in head.volume_fc.parameters())

    def test_fuse_and_classify_mean(self):
        torch.manual_seed(0)
        head = FusionHead(2, widths=(4, 4, 4), k=2)
        img, tumor = toy_volume()
        p = extract_tumor_patches(img, tumor, 16)
        prob, per = fuse_and_classify(head, p.images, p.masks, 500.0)
        assert per.shape == (N_PATCHES,) and prob == pytest.approx(per.mean())
        with pytest.raises(InputError):
            fuse_and_classify(head, p.images[:8], p.masks[:8], None)


class TestTraining:
    def test_learns_separable_texture(self):
        rng = np.random.default_rng(0)
        n = 16
        y = np.array([0, 1] * (n // 2))
        amp = 0.2 + 0.8 * y
        patches = rng.normal(size=(n, 9, 1, 12, 12)).astype(np.float32) * amp[:, None, None, None, None]
        masks = np.ones((n, 9, 1, 12, 12), np.float32)
        head, losses = train_fusion(patches, masks, y, None, FusionConfig(epochs=25, batch_size=18, lr=0.01), seed=0)
        assert losses[-1] < losses[0]
        probs = [fuse_and_classify(head, patches[i], masks[i], None)[0] for i in range(n)]
        probs = np.array(probs)
        assert probs[y == 1].mean() > probs[y == 0].mean()

    def test_volume_cue_used(self):
        rng = np.random.default_rng(1)
        n = 16
        y = np.array([0, 1] * (n // 2))
        patches = rng.normal(size=(n, 9, 1, 8, 8)).astype(np.float32)
        masks = np.ones((n, 9, 1, 8, 8), np.float32)
        vmax = np.where(y == 1, 900.0, 100.0) + rng.normal(0, 20, n)
        head, _ = train_fusion(patches, masks, y, vmax, FusionConfig(epochs=30, batch_size=18, lr=0.01), seed=0)
        probs = np.array([fuse_and_classify(head, patches[i], masks[i], vmax[i])[0] for i in range(n)])
        assert probs[y == 1].min() > probs[y == 0].max()

    def test_single_class(self):
        with pytest.raises(DegenerateDataError):
            train_fusion(np.zeros((2, 9, 1, 4, 4)), np.zeros((2, 9, 1, 4, 4)), [1, 1])

    def test_prediction_csv(self, tmp_path):
        rows = [{"patient_id": "p0", "v_max_mm3": 12.5, "per_patch": np.linspace(0, 1, 9), "prob": 0.5,
                 "pred": True, "gt": False}]
        write_prediction_csv(tmp_path / "f.csv", rows)
        r = list(csv.DictReader(open(tmp_path / "f.csv")))
        assert r[0]["pred_label"] == "1" and r[0]["gt_label"] == "0" and float(r[0]["p8"]) == 1.0

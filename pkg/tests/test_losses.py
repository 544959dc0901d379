from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from lnmet.errors import InputError
from lnmet.losses import (TverskyWeights, ce_loss, combined_loss, deep_supervision_loss, level_weights, one_hot,
                          torch_combined_loss, tversky_loss)
from oracles import central_difference, relative_error


def random_field(rng, shape=(4, 4, 3), fg_rate=0.3):
    p1 = rng.uniform(0.02, 0.98, shape)
    p = np.stack([1 - p1, p1])
    y = one_hot(rng.random(shape) < fg_rate)
    return p, y


def fd_check(fn, p, rng, n_points=120, h=1e-6):
    analytic = fn(p).grad
    worst = 0.0
    flat = [tuple(int(v) for v in np.unravel_index(i, p.shape))
            for i in rng.choice(p.size, size=min(n_points, p.size), replace=False)]
    for idx in flat:
        num = central_difference(lambda q: fn(q).value, p, idx, h)
        worst = max(worst, relative_error(analytic[idx], num))
    return worst, len(flat)


class TestTversky:
    @pytest.mark.parametrize("form", ["paper", "standard"])
    def test_gradient(self, form):
        rng = np.random.default_rng(0 if form == "paper" else 1)
        p, y = random_field(rng, (5, 5, 5))
        h = 1e-7 if form == "paper" else 1e-6
        worst, n = fd_check(lambda q: tversky_loss(q, y, TverskyWeights(0.5, 1.5), form), p, rng, h=h)
        assert n >= 100
        assert worst < 1e-3

    def test_perfect_prediction(self):
        y = one_hot(np.eye(4)[:, :, None].repeat(2, axis=2) > 0)
        n = y[1].size
        paper = tversky_loss(y, y, form="paper", eps=0.0).value
        assert paper == pytest.approx(-1.0 / n)
        assert tversky_loss(y, y, form="standard", eps=0.0).value == pytest.approx(0.0)

    def test_no_overlap(self):
        y = one_hot(np.array([1, 0, 0, 0]).reshape(4, 1, 1))
        p = 1 - y
        assert tversky_loss(p, y).value == 0.0
        assert tversky_loss(p, y, form="standard").value == pytest.approx(1.0)

    def test_empty_target_is_finite(self):
        y = one_hot(np.zeros((3, 3, 3)))
        p = np.stack([np.full((3, 3, 3), 0.9), np.full((3, 3, 3), 0.1)])
        r = tversky_loss(p, y)
        assert np.isfinite(r.value) and np.isfinite(r.grad).all()

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0, 3), st.floats(0, 3), st.integers(1, 6))
    def test_paper_form_bounds(self, seed, alpha, beta, n):
        rng = np.random.default_rng(seed)
        p, y = random_field(rng, (n, n, 2), rng.random())
        v = tversky_loss(p, y, TverskyWeights(alpha, beta), "paper").value
        assert -1.0 / p[1].size - 1e-15 <= v <= 0.0

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            tversky_loss(np.zeros((2, 3)), np.zeros((2, 4)))
        with pytest.raises(InputError):
            tversky_loss(np.zeros((3, 2)), np.zeros((3, 2)))
        with pytest.raises(InputError):
            tversky_loss(np.zeros((2, 2)), np.zeros((2, 2)), form="dice")
        with pytest.raises(InputError):
            TverskyWeights(-1, 1)


class TestCrossEntropy:
    def test_gradient(self):
        rng = np.random.default_rng(2)
        p, y = random_field(rng, (5, 5, 5))
        worst, n = fd_check(lambda q: ce_loss(q, y), p, rng)
        assert n >= 100 and worst < 1e-3

    def test_value(self):
        y = one_hot(np.array([[[1]], [[0]]]))
        p = np.stack([np.array([[[0.2]], [[0.6]]]), np.array([[[0.8]], [[0.4]]])])
        assert ce_loss(p, y).value == pytest.approx(-(np.log(0.8) + np.log(0.6)) / 2)

    def test_clip_keeps_finite(self):
        y = one_hot(np.array([1, 0]).reshape(2, 1, 1))
        p = np.stack([np.array([1.0, 0.0]), np.array([0.0, 1.0])]).reshape(2, 2, 1, 1)
        r = ce_loss(p, y)
        assert np.isfinite(r.value) and r.value == pytest.approx(-np.log(1e-7))
        assert (r.grad == 0).all()


class TestCombinedAndDeepSupervision:
    def test_combined_is_sum(self):
        rng = np.random.default_rng(3)
        p, y = random_field(rng)
        r = combined_loss(p, y)
        assert r.value == pytest.approx(ce_loss(p, y).value + tversky_loss(p, y).value)
        np.testing.assert_allclose(r.grad, ce_loss(p, y).grad + tversky_loss(p, y).grad)

    @pytest.mark.parametrize("n,expect", [(1, [1.0]), (2, [2 / 3, 1 / 3]), (3, [4 / 7, 2 / 7, 1 / 7])])
    def test_level_weights(self, n, expect):
        np.testing.assert_allclose(level_weights(n), expect)

    def test_deep_supervision_total(self):
        rng = np.random.default_rng(4)
        levels = [random_field(rng, (4, 4, 4)), random_field(rng, (2, 2, 2))]
        total, grads = deep_supervision_loss([lv[0] for lv in levels], [lv[1] for lv in levels])
        w = level_weights(2)
        expect = sum(wi * combined_loss(p, y).value for wi, (p, y) in zip(w, levels))
        assert total.value == pytest.approx(expect)
        np.testing.assert_allclose(grads[1], w[1] * combined_loss(*levels[1]).grad)

    def test_deep_supervision_length_mismatch(self):
        with pytest.raises(InputError):
            deep_supervision_loss([np.zeros((2, 1))], [])


class TestTorchBridge:
    def test_gradient_reaches_logits(self):
        torch.manual_seed(0)
        logits = torch.randn(2, 2, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        target = torch.from_numpy(np.random.default_rng(0).random((2, 4, 4, 4)) < 0.3)
        y = torch.stack([~target, target], 1).double()
        probs = torch.softmax(logits, 1)
        loss, parts = torch_combined_loss(probs, y, form="standard", weight=0.5)
        loss.backward()
        # reference: same loss written directly in torch
        ref_logits = logits.detach().clone().requires_grad_(True)
        p = torch.softmax(ref_logits, 1).transpose(0, 1)
        yt = y.transpose(0, 1)
        n = p[0].numel()
        ce = -(yt * torch.log(p.clamp(1e-7, 1 - 1e-7))).sum() / n
        tp = (p[1] * yt[1]).sum()
        fp = (p[1] * yt[0]).sum()
        fn = (p[0] * yt[1]).sum()
        tv = 1 - tp / (tp + 0.5 * fp + 1.5 * fn + 1e-6)
        (0.5 * (ce + tv)).backward()
        torch.testing.assert_close(logits.grad, ref_logits.grad, rtol=1e-9, atol=1e-12)
        assert loss.item() == pytest.approx(0.5 * (ce + tv).item())
        assert parts["ce"] == pytest.approx(0.5 * ce.item())

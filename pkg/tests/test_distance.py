from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lnmet.distance import (DEFAULT_PARAMS, DISTANCE_CAP, STRUCTURES, TrapezoidParams, attention_from_organs,
                            calibrate_params, default_params_path, downsample_attention, fuse_attention,
                            load_params, save_params, signed_distance, signed_distance_transform,
                            squared_edt, trapezoid)
from lnmet.errors import DegenerateDataError, InputError
from lnmet.volume import LabelVolume
from oracles import brute_sdt


def random_blob_mask(rng, shape, n_blobs=3):
    idx = np.indices(shape).transpose(1, 2, 3, 0)
    m = np.zeros(shape, bool)
    for _ in range(n_blobs):
        c = rng.uniform(0, shape)
        r = rng.uniform(1.5, max(2.0, min(shape) / 3), 3)
        m |= (((idx - c) / r) ** 2).sum(-1) <= 1
    return m


class TestSquaredEdt:
    def test_single_point(self):
        f = np.zeros((5, 6, 7), bool)
        f[2, 3, 4] = True
        sp = (0.5, 1.0, 2.0)
        idx = np.indices(f.shape).transpose(1, 2, 3, 0)
        expect = (((idx - [2, 3, 4]) * sp) ** 2).sum(-1)
        np.testing.assert_allclose(squared_edt(f, sp), expect, atol=1e-12)

    def test_no_features_is_inf(self):
        assert np.isinf(squared_edt(np.zeros((3, 3, 3), bool), (1, 1, 1))).all()

    def test_matches_scipy_reference(self):
        from scipy.ndimage import distance_transform_edt
        rng = np.random.default_rng(0)
        f = rng.random((20, 17, 13)) < 0.02
        sp = (0.68, 0.68, 0.8)
        ref = distance_transform_edt(~f, sampling=sp) ** 2
        np.testing.assert_allclose(squared_edt(f, sp), ref, atol=1e-9)


class TestSignedDistance:
    @pytest.mark.parametrize("seed", range(6))
    def test_against_full_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        shape = tuple(int(s) for s in rng.integers(5, 11, 3))
        sp = tuple(rng.uniform(0.4, 2.0, 3))
        m = random_blob_mask(rng, shape)
        if not m.any():
            m[0, 0, 0] = True
        sd, empty = signed_distance(m, sp)
        assert not empty
        np.testing.assert_allclose(sd, brute_sdt(m, sp), atol=1e-9)

    def test_boundary_restricted_oracle_agrees_with_full(self):
        rng = np.random.default_rng(11)
        m = random_blob_mask(rng, (9, 8, 7))
        sp = (0.7, 1.1, 1.9)
        np.testing.assert_allclose(brute_sdt(m, sp, True), brute_sdt(m, sp), atol=1e-12)

    def test_sign_convention(self):
        m = np.zeros((9, 9, 9), bool)
        m[3:6, 3:6, 3:6] = True
        sd, _ = signed_distance(m, (1, 1, 1))
        assert sd[4, 4, 4] == pytest.approx(-2.0)
        assert sd[3, 3, 3] == pytest.approx(-1.0)
        assert sd[2, 4, 4] == pytest.approx(1.0)
        assert (sd[m] < 0).all() and (sd[~m] > 0).all()

    def test_single_center_voxel(self):
        m = np.zeros((3, 3, 3), bool)
        m[1, 1, 1] = True
        sd, _ = signed_distance(m, (1, 1, 1))
        assert sd[0, 1, 1] == pytest.approx(1.0)
        assert sd[0, 0, 0] == pytest.approx(math.sqrt(3))

    def test_full_cube_center_is_two_voxels_from_exterior(self):
        # exterior background sits one voxel past the border, two from the center
        sd, _ = signed_distance(np.ones((3, 3, 3), bool), (1, 1, 1))
        assert sd[1, 1, 1] == pytest.approx(-2.0)
        assert sd[0, 1, 1] == pytest.approx(-1.0)

    def test_border_structure_has_finite_interior(self):
        m = np.ones((4, 4, 4), bool)
        sd, _ = signed_distance(m, (2, 2, 2))
        assert sd[0, 0, 0] == pytest.approx(-2.0)
        assert sd.min() == pytest.approx(-4.0)

    def test_empty_structure(self):
        sd, empty = signed_distance(np.zeros((3, 3, 3), bool), (1, 1, 1))
        assert empty and (sd == DISTANCE_CAP).all()

    def test_empty_label_warns(self, caplog):
        lab = LabelVolume(np.zeros((3, 3, 3), np.uint16), (1, 1, 1))
        dm = signed_distance_transform(lab, 4)
        assert dm.empty
        assert "absent" in caplog.text

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_one_lipschitz_along_axes(self, seed):
        rng = np.random.default_rng(seed)
        sp = rng.uniform(0.3, 2.0, 3)
        m = random_blob_mask(rng, (8, 8, 8), 2)
        sd, empty = signed_distance(m, sp)
        if empty:
            return
        for ax in range(3):
            step = np.abs(np.diff(sd, axis=ax))
            assert (step <= sp[ax] * 2 + 1e-9).all()


class TestTrapezoid:
    spleen = TrapezoidParams(0, 16)

    @pytest.mark.parametrize("d,expect", [(8, 1.0), (0, 1.0), (16, 1.0), (17.5, 0.5), (19.01, 0.0),
                                          (-1.5, 0.5), (-3.0, 0.0), (-50, 0.0), (100, 0.0)])
    def test_closed_form(self, d, expect):
        assert trapezoid(d, self.spleen) == pytest.approx(expect)

    def test_disabled_is_zero(self):
        assert (trapezoid(np.linspace(-10, 10, 7), TrapezoidParams.disabled()) == 0).all()

    def test_invalid_params(self):
        with pytest.raises(InputError):
            TrapezoidParams(5, 1)
        with pytest.raises(InputError):
            TrapezoidParams(0, 1, smooth=0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-30, 30), st.floats(0, 30), st.floats(0.1, 10), st.floats(-100, 100))
    def test_range_and_symmetry(self, lo, width, smooth, d):
        p = TrapezoidParams(lo, lo + width, smooth)
        v = float(trapezoid(d, p))
        assert 0.0 <= v <= 1.0
        mirrored = float(trapezoid(2 * lo + width - d, p))
        assert v == pytest.approx(mirrored, abs=1e-9)


class TestFusion:
    def test_interior_override_and_max(self):
        organs = np.zeros((3, 1, 1), np.uint16)
        organs[0] = 1
        organs[1] = 2
        a1 = np.array([0.2, 0.9, 0.4]).reshape(3, 1, 1)
        a2 = np.array([0.7, 0.1, 0.6]).reshape(3, 1, 1)
        fused = fuse_attention([a1, a2], organs)
        np.testing.assert_allclose(fused.ravel(), [0.2, 0.1, 0.6])

    def test_random_constructed_maps(self):
        rng = np.random.default_rng(0)
        organs = rng.integers(0, 4, (6, 6, 6))
        maps = [rng.random((6, 6, 6)) for _ in range(3)]
        fused = fuse_attention(maps, organs)
        for idx in np.ndindex(organs.shape):
            lab = organs[idx]
            expect = maps[lab - 1][idx] if lab else max(m[idx] for m in maps)
            assert fused[idx] == expect
        assert fused.min() >= 0 and fused.max() <= 1

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            fuse_attention([np.zeros((2, 2, 2))], np.zeros((2, 2, 3), int))

    def test_unknown_label(self):
        with pytest.raises(InputError):
            fuse_attention([np.zeros((2, 2, 2))], np.full((2, 2, 2), 2))

    def test_attention_from_organs_range(self):
        organs = np.zeros((12, 12, 12), np.uint16)
        organs[2:5, 2:5, 2:5] = 1
        organs[7:10, 7:10, 7:10] = 5
        att = attention_from_organs(LabelVolume(organs, (1, 1, 1)), DEFAULT_PARAMS)
        assert att.data.min() >= 0 and att.data.max() <= 1
        assert att.data[3, 3, 3] == pytest.approx(1 / 3)


class TestCalibration:
    def test_assigns_argmin_and_covers(self):
        rng = np.random.default_rng(3)
        organs = np.zeros((16, 16, 16), np.uint16)
        organs[1:5, 1:5, 1:5] = 1
        organs[10:14, 10:14, 10:14] = 2
        ln = np.zeros(organs.shape, bool)
        ln[rng.integers(0, 16, 30), rng.integers(0, 16, 30), rng.integers(0, 16, 30)] = True
        ln &= organs == 0
        sp = (0.7, 0.7, 0.8)
        dm = [signed_distance(organs == i + 1, sp)[0] for i in range(2)]
        params = calibrate_params([ln], [dm], ("a", "b"))
        att = fuse_attention([trapezoid(dm[0], params["a"]), trapezoid(dm[1], params["b"])], organs)
        assert (att[ln] == 1.0).all()
        owner = np.argmin(np.stack([d[ln] for d in dm]), axis=0)
        for k, name in enumerate(("a", "b")):
            sel = np.stack([d[ln] for d in dm])[k][owner == k]
            assert params[name].d_min == sel.min() and params[name].d_max == sel.max()

    def test_tie_goes_to_lowest_index(self):
        d = np.zeros((1, 1, 1))
        params = calibrate_params([np.ones((1, 1, 1), bool)], [[d, d]], ("a", "b"))
        assert params["a"].enabled and not params["b"].enabled

    def test_no_voxels(self):
        with pytest.raises(DegenerateDataError):
            calibrate_params([np.zeros((2, 2, 2), bool)], [[np.zeros((2, 2, 2))]], ("a",))

    def test_wrong_map_count(self):
        with pytest.raises(InputError):
            calibrate_params([np.ones((1, 1, 1), bool)], [[np.zeros((1, 1, 1))]], ("a", "b"))

    def test_params_roundtrip(self, tmp_path):
        params = dict(DEFAULT_PARAMS)
        params["lga"] = TrapezoidParams.disabled(2.5)
        save_params(tmp_path / "p.tsv", params)
        back = load_params(tmp_path / "p.tsv")
        assert back["spleen"] == params["spleen"]
        assert not back["lga"].enabled and back["lga"].smooth == 2.5

    def test_shipped_defaults_match_constants(self):
        shipped = load_params(default_params_path())
        assert tuple(shipped) == STRUCTURES
        assert shipped == DEFAULT_PARAMS


class TestDownsample:
    def test_block_max(self):
        a = np.arange(64, dtype=float).reshape(4, 4, 4)
        out = downsample_attention(a, (2, 2, 2))
        assert out.shape == (2, 2, 2)
        assert out[0, 0, 0] == a[:2, :2, :2].max()

    def test_ragged_shape(self):
        out = downsample_attention(np.ones((5, 4, 3)), (2, 2, 2))
        assert out.shape == (3, 2, 2)
        assert (out == 1).all()

    def test_zero_stays_zero(self):
        a = np.zeros((6, 6, 6))
        a[0, 0, 0] = 0.3
        out = downsample_attention(a, (3, 3, 3))
        assert out[0, 0, 0] == 0.3 and out.sum() == pytest.approx(0.3)

    def test_bad_factors(self):
        with pytest.raises(InputError):
            downsample_attention(np.zeros((2, 2, 2)), (0, 1, 1))

    def test_identity_copy(self):
        a = np.ones((2, 2, 2))
        b = downsample_attention(a, (1, 1, 1))
        assert b is not a and math.isclose(b.sum(), 8)

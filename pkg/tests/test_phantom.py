from __future__ import annotations

import json

import numpy as np
import pytest

from lnmet.distance import DEFAULT_PARAMS, STRUCTURES, attention_from_organs
from lnmet.errors import InputError
from lnmet.instances import gt_instances
from lnmet.phantom import (CASE_FILES, PhantomConfig, build_organs, generate_case, generate_cohort,
                           read_cohort, write_cohort)
from lnmet.pipeline import calibrate_cases, case_attention
from lnmet.volume import label_components

SMALL = PhantomConfig(dims=(32, 32, 32), spacing=(2.04, 2.04, 2.4), n_cases=6, seed=3)


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(SMALL)


class TestOrgans:
    def test_all_structures_present(self):
        organs = build_organs((48, 48, 48), (1.36, 1.36, 1.6))
        assert set(np.unique(organs)) == set(range(len(STRUCTURES) + 1))

    def test_jitter_is_seeded(self):
        a = build_organs((32, 32, 32), (2.04, 2.04, 2.4), np.random.default_rng(0), 1.5)
        b = build_organs((32, 32, 32), (2.04, 2.04, 2.4), np.random.default_rng(0), 1.5)
        np.testing.assert_array_equal(a, b)


class TestCases:
    def test_deterministic(self):
        a = generate_case(SMALL, 2)
        b = generate_case(SMALL, 2)
        for k in CASE_FILES:
            assert getattr(a, k).data.tobytes() == getattr(b, k).data.tobytes()

    def test_case_independent_of_cohort_size(self, cohort):
        alone = generate_case(SMALL, 4)
        assert alone.ct_a.data.tobytes() == cohort[4].ct_a.data.tobytes()

    def test_labels_consistent(self, cohort):
        for c in cohort:
            inst = gt_instances(c.ln_gt.data, c.spacing)
            assert len(inst) == len(c.lns)
            has_pos = any(i.gt_label == "positive" for i in inst)
            assert has_pos == c.metastasis

    def test_nodes_are_separate_components(self, cohort):
        for c in cohort:
            _, k = label_components(c.ln_gt.data > 0)
            assert k == len(c.lns)

    def test_nodes_inside_default_bands(self, cohort):
        for c in cohort:
            att = attention_from_organs(c.organs, DEFAULT_PARAMS).data
            assert (att[c.ln_gt.data > 0] == 1.0).all()

    def test_distractors_outside_prior(self, cohort):
        for c in cohort:
            att = attention_from_organs(c.organs, DEFAULT_PARAMS).data
            for d in c.distractors:
                assert att[tuple(d["center"])] == 0.0
                assert c.ln_gt.data[tuple(d["center"])] == 0

    def test_tumor_in_pancreas_region(self, cohort):
        pancreas = STRUCTURES.index("pancreas") + 1
        for c in cohort:
            t = c.tumor.data > 0
            assert t.any()
            assert (c.organs.data[t] == pancreas).mean() > 0.5

    def test_invalid_config(self):
        with pytest.raises(InputError):
            PhantomConfig(positive_rate=1.5)
        with pytest.raises(InputError):
            PhantomConfig(dims=(4, 4, 4))

    def test_calibrated_attention_covers_nodes(self, cohort):
        params = calibrate_cases(cohort)
        for c in cohort:
            att = case_attention(c, params)
            assert (att[c.ln_gt.data > 0] == 1.0).all()


class TestFiles:
    def test_roundtrip(self, cohort, tmp_path):
        manifest = write_cohort(tmp_path, cohort[:2], SMALL)
        back_manifest, back = read_cohort(tmp_path)
        assert back_manifest == json.loads(json.dumps(manifest))
        for a, b in zip(cohort[:2], back):
            assert a.case_id == b.case_id and a.metastasis == b.metastasis
            for k in CASE_FILES:
                assert getattr(a, k).data.tobytes() == getattr(b, k).data.tobytes()

    def test_manifest_hash_tracks_config(self, cohort, tmp_path):
        m1 = write_cohort(tmp_path / "a", cohort[:1], SMALL)
        m2 = write_cohort(tmp_path / "b", cohort[:1], SMALL, seed=99)
        assert m1["inputs_sha256"] != m2["inputs_sha256"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InputError):
            read_cohort(tmp_path)

from __future__ import annotations

import csv
import json

import pytest

from cli_chain import TINY_CONFIG, chain_steps, output_files, run_chain
from lnmet.cli import build_parser, main


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    return root, run_chain(root)


class TestChain:
    def test_every_step_wrote_run_record(self, chain):
        _, dirs = chain
        for name, d in dirs.items():
            run = json.loads((d / "run.json").read_text())
            assert (d / "config.yaml").exists()
            assert run["seed"] == 0 and run["fold"] == 0
            for entry in run["inputs"].values():
                assert len(entry["sha256"]) == 64

    def test_expected_outputs(self, chain):
        _, dirs = chain
        assert (dirs["split"] / "split.json").exists()
        assert (dirs["cal"] / "params.tsv").exists()
        assert (dirs["seg_train"] / "micronet.ckpt").exists()
        assert (dirs["ident"] / "instances.csv").exists()
        assert (dirs["agg"] / "patient_predictions.csv").exists()
        assert (dirs["fp"] / "fusion_predictions.csv").exists()
        assert list((dirs["st"]).glob("*.json"))

    def test_calibrated_attention_covers_ln(self, chain):
        _, dirs = chain
        report = json.loads((dirs["att"] / "coverage.json").read_text())
        assert report["calibration_coverage"] == 1.0
        assert 0 < report["coverage"] <= 1.0

    def test_audit_has_no_uninformative_negatives(self, chain):
        _, dirs = chain
        rows = list(csv.DictReader(open(dirs["audit"] / "provenance.csv")))
        assert rows
        for row in rows:
            assert row["has_foreground"] == "1" or float(row["max_attention"]) > 0

    @pytest.mark.parametrize("name", ["split", "cal", "seg_train", "ident", "agg", "fp"])
    def test_rerun_is_bitwise(self, chain, name):
        root, dirs = chain
        out = root / f"rerun_{name}"
        assert main(["rerun", str(dirs[name]), "--out", str(out)]) == 0
        assert output_files(out) == output_files(dirs[name])
        assert output_files(out)


class TestExitCodes:
    def test_non_empty_out_dir(self, tmp_path):
        (tmp_path / "keep").write_text("x")
        assert main(["phantom", "--out", str(tmp_path)]) == 2

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("no_such_section: {a: 1}\n")
        assert main(["phantom", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_missing_input(self, tmp_path):
        assert main(["split", "--cohort", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3

    def test_rerun_of_non_run_dir(self, tmp_path):
        assert main(["rerun", str(tmp_path), "--out", str(tmp_path / "o")]) == 3

    def test_rerun_detects_changed_input(self, tmp_path):
        cfg = tmp_path / "tiny.yaml"
        cfg.write_text(TINY_CONFIG)
        assert main(["phantom", "--config", str(cfg), "--out", str(tmp_path / "ph")]) == 0
        cohort = tmp_path / "ph" / "cohort"
        assert main(["split", "--config", str(cfg), "--cohort", str(cohort), "--out", str(tmp_path / "sp")]) == 0
        victim = next(p for p in sorted(cohort.rglob("*")) if p.is_file())
        victim.write_bytes(victim.read_bytes() + b"\0")
        assert main(["rerun", str(tmp_path / "sp"), "--out", str(tmp_path / "again")]) == 3


class TestParser:
    def test_every_step_parses(self, tmp_path):
        parser = build_parser()
        for _, argv in chain_steps(tmp_path):
            args = parser.parse_args([*argv, "--out", str(tmp_path / "x")])
            assert args.command == argv[0]

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip()

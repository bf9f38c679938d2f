"""End-to-end runs of the noisycp command line through typer's test runner."""
from __future__ import annotations

import csv
import io
import json
import math

import pytest
from typer.testing import CliRunner

from cli_io.reports import write_calibration
from conformal.calibrator import CalibrationResult, MethodKind
from conformal.score_kernels import ScoreKind, ScoreSpec
from main import app, main

runner = CliRunner()

SMALL = ["--synth-n", "240", "--synth-k", "5", "--n-splits", "6"]


def _invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


def _error_line(result):
    for line in result.output.splitlines():
        if line.startswith("{") and '"error"' in line:
            return json.loads(line)
    raise AssertionError(f"no error line in output: {result.output!r}")


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "pool.csv"
    result = _invoke("synth", "--output", path, "--synth-n", "150", "--synth-k", "4", "--epsilon", "0.2")
    assert result.exit_code == 0, result.output
    return path


def _hand_calibration(tmp_path, q, spec, k=3, method=MethodKind.NOISY_CP, epsilon=None):
    calib = CalibrationResult(
        method=method, q=q, alpha=0.1, n=100, k=k, score_spec=spec, epsilon=epsilon, seed=1
    )
    return write_calibration(tmp_path / "calib.json", calib, {})


# ── synth / calibrate / predict ───────────────────────────────────────────────

class TestCalibrateAndPredict:
    def test_synth_writes_dataset(self, dataset):
        lines = dataset.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "p_0,p_1,p_2,p_3,label,clean_label"
        assert len(lines) == 151

    def test_calibrate_writes_finite_threshold(self, tmp_path, dataset):
        out = tmp_path / "calib.json"
        result = _invoke(
            "calibrate", "--dataset", dataset, "--score", "HPS", "--alpha", "0.1",
            "--method", "NR_CP", "--output", out,
        )
        assert result.exit_code == 0, result.output
        document = json.loads(out.read_text(encoding="utf-8"))
        assert document["n"] == 150
        assert document["method"] == "NR_CP"
        assert isinstance(document["q"], float) and math.isfinite(document["q"])
        assert document["score_spec"]["kind"] == "HPS"
        assert document["config"]["dataset"] == str(dataset)
        assert document["epsilon"] == 0.2

    def test_single_row_dataset_overflows(self, tmp_path):
        data = tmp_path / "one.csv"
        data.write_text("p_0,p_1,p_2,label\n0.6,0.3,0.1,0\n", encoding="utf-8")
        out = tmp_path / "calib.json"
        result = _invoke("calibrate", "--dataset", data, "--alpha", "0.1", "--output", out)
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text(encoding="utf-8"))["q"] == "+inf"

        sets = tmp_path / "sets.csv"
        result = _invoke("predict", "--calibration", out, "--dataset", data, "--output", sets)
        assert result.exit_code == 0, result.output
        assert _rows(sets) == [{"sample_index": "0", "set_size": "3", "members": "0;1;2"}]

    def test_bad_row_sum_is_a_validation_error(self, tmp_path):
        data = tmp_path / "bad.csv"
        data.write_text("p_0,p_1,p_2,label\n0.5,0.3,0.1,0\n", encoding="utf-8")
        result = _invoke("calibrate", "--dataset", data)
        assert result.exit_code == 1
        error = _error_line(result)
        assert error["error"] == "input"
        assert "line 2" in error["message"]

    def test_hps_prediction_example(self, tmp_path):
        calib = _hand_calibration(tmp_path, 0.5, ScoreSpec(ScoreKind.HPS))
        data = tmp_path / "test.csv"
        data.write_text("p_0,p_1,p_2,label\n0.7,0.2,0.1,0\n0.4,0.35,0.25,1\n", encoding="utf-8")
        sets = tmp_path / "sets.csv"
        result = _invoke("predict", "--calibration", calib, "--dataset", data, "--output", sets)
        assert result.exit_code == 0, result.output
        rows = _rows(sets)
        assert rows[0] == {"sample_index": "0", "set_size": "1", "members": "0"}
        # every HPS score of the second row exceeds 0.5
        assert rows[1] == {"sample_index": "1", "set_size": "0", "members": ""}

    def test_k_mismatch(self, tmp_path, dataset):
        calib = _hand_calibration(tmp_path, 0.5, ScoreSpec(ScoreKind.HPS), k=3)
        result = _invoke("predict", "--calibration", calib, "--dataset", dataset)
        assert result.exit_code == 1
        assert _error_line(result)["error"] == "input"

    def test_randomized_prediction_is_seeded(self, tmp_path, dataset):
        spec = ScoreSpec(ScoreKind.APS, randomized=True)
        calib = _hand_calibration(tmp_path, 0.8, spec, k=4, method=MethodKind.NR_CP, epsilon=0.2)
        outputs = []
        for name, seed in (("a.csv", 3), ("b.csv", 3), ("c.csv", 4)):
            out = tmp_path / name
            result = _invoke("predict", "--calibration", calib, "--dataset", dataset,
                             "--test-seed", seed, "--output", out)
            assert result.exit_code == 0, result.output
            outputs.append(out.read_text(encoding="utf-8"))
        assert outputs[0] == outputs[1]
        assert outputs[0] != outputs[2]

    def test_missing_calibration_file(self, tmp_path, dataset):
        result = _invoke("predict", "--calibration", tmp_path / "none.json", "--dataset", dataset)
        assert result.exit_code == 1

    def test_non_utf8_dataset_is_a_validation_error(self, tmp_path):
        data = tmp_path / "binary.csv"
        data.write_bytes(b"\xff\xfe\x00\x01")
        result = _invoke("calibrate", "--dataset", data, "--method", "NOISY_CP")
        assert result.exit_code == 1
        assert _error_line(result)["error"] == "input"

    def test_non_utf8_calibration_is_a_validation_error(self, tmp_path, dataset):
        calib = tmp_path / "calib.json"
        calib.write_bytes(b"\xff\xfe\x00\x01")
        result = _invoke("predict", "--calibration", calib, "--dataset", dataset)
        assert result.exit_code == 1
        assert _error_line(result)["error"] == "config"

    def test_calibrate_to_stdout_carries_raw_threshold(self, dataset):
        result = _invoke(
            "calibrate", "--dataset", dataset, "--score", "HPS", "--method", "NRES_CP", "--epsilon", "0.2",
        )
        assert result.exit_code == 0, result.output
        document = json.loads(result.output)
        assert document["method"] == "NRES_CP"
        assert isinstance(document["q_raw"], float)


# ── experiment / sweep ────────────────────────────────────────────────────────

class TestExperiment:
    def test_report_and_tables(self, tmp_path):
        out, table, splits = tmp_path / "report.json", tmp_path / "long.csv", tmp_path / "splits.csv"
        result = _invoke("experiment", *SMALL, "--output", out, "--csv-output", table, "--splits-output", splits)
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text(encoding="utf-8"))
        assert set(report["methods"]) == {"ORACLE_CP", "NOISY_CP", "NRES_CP", "NR_CP"}
        assert report["config"]["splits"]["n_splits"] == 6
        assert report["n_calib"] == 120
        rows = _rows(table)
        assert list(rows[0]) == ["method", "metric", "mean", "std"]
        assert len(rows) == 16
        assert len(_rows(splits)) == 6 * 4

    def test_zero_noise_oracle_equals_noisy(self, tmp_path):
        out = tmp_path / "report.json"
        result = _invoke("experiment", *SMALL, "--epsilon", "0", "--output", out)
        assert result.exit_code == 0, result.output
        methods = json.loads(out.read_text(encoding="utf-8"))["methods"]
        assert methods["ORACLE_CP"] == methods["NOISY_CP"]

    def test_byte_identical_across_thread_caps(self, tmp_path, monkeypatch):
        texts = []
        for threads in ("1", "8", "1"):
            monkeypatch.setenv("NOISY_CP_THREADS", threads)
            out = tmp_path / f"report_{threads}_{len(texts)}.json"
            result = _invoke("experiment", *SMALL, "--randomized", "--output", out)
            assert result.exit_code == 0, result.output
            texts.append(out.read_bytes())
        assert texts[0] == texts[1] == texts[2]

    def test_config_file_and_flags(self, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("alpha: 0.2\nmethods: [NOISY_CP, NR_CP]\nsplits:\n  n_splits: 3\n", encoding="utf-8")
        out = tmp_path / "report.json"
        result = _invoke("experiment", "--config", config, "--synth-n", "100", "--alpha", "0.15", "--output", out)
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["config"]["alpha"] == 0.15
        assert report["config"]["splits"]["n_splits"] == 3
        assert set(report["methods"]) == {"NOISY_CP", "NR_CP"}

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("alhpa: 0.2\n", encoding="utf-8")
        result = _invoke("experiment", "--config", config)
        assert result.exit_code == 1
        assert _error_line(result)["error"] == "config"

    def test_sweep_has_one_block_per_level(self, tmp_path):
        out, table = tmp_path / "sweep.json", tmp_path / "sweep.csv"
        result = _invoke("sweep", *SMALL, "--eps-grid", "0,0.1,0.3", "--output", out, "--csv-output", table)
        assert result.exit_code == 0, result.output
        document = json.loads(out.read_text(encoding="utf-8"))
        assert [block["epsilon"] for block in document["reports"]] == [0.0, 0.1, 0.3]
        assert list(_rows(table)[0]) == ["epsilon", "method", "metric", "value"]

    def test_sweep_needs_grid(self):
        result = _invoke("sweep", *SMALL)
        assert result.exit_code == 1


# ── entrypoint ────────────────────────────────────────────────────────────────

class TestEntrypoint:
    def test_version(self):
        result = _invoke("--version")
        assert result.exit_code == 0
        assert "noisycp" in result.output

    def test_usage_error_maps_to_validation_code(self, capsys):
        assert main(["calibrate", "--no-such-flag"]) == 1
        assert '"usage"' in capsys.readouterr().err

    def test_unparseable_option_value_maps_to_validation_code(self, capsys):
        assert main(["experiment", "--alpha", "high"]) == 1
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["error"] == "usage"

    def test_help(self):
        assert main(["--help"]) == 0

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from evidence_da.cli import build_parser, main
from evidence_da.datagen import write_csv
from evidence_da.stats import LabeledDataset


@pytest.fixture
def labeled_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(12, 3)), rng.normal(size=(12, 3)) + 2.0])
    data = LabeledDataset(X, np.repeat([1, 2], 12), 2, ("bad", "good"))
    path = tmp_path / "train.csv"
    write_csv(data, path)
    return path


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestFitPredict:
    def test_round_trip(self, tmp_path, labeled_csv, capsys):
        model = tmp_path / "m.json"
        code, out, _ = _run(["fit", "--data", str(labeled_csv), "--header", "--model", str(model)], capsys)
        assert code == 0
        report = json.loads(out)
        assert [e["class"] for e in report["experiments"]] == ["bad", "good"]
        assert model.exists()

        code, out, _ = _run(["predict", "--model", str(model), "--data", str(labeled_csv), "--header",
                             "--label-column", "label"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["meta"]["accuracy"] > 0.9
        row = report["experiments"][0]
        assert row["p_bad"] + row["p_good"] == pytest.approx(1.0, abs=1e-12)

    def test_predict_unlabeled_csv_output(self, tmp_path, labeled_csv, capsys):
        model = tmp_path / "m.json"
        assert _run(["fit", "--data", str(labeled_csv), "--header", "--model", str(model), "--variant", "A"],
                    capsys)[0] == 0
        queries = tmp_path / "q.csv"
        queries.write_text("0,0,0\n2,2,2\n")
        out_file = tmp_path / "pred.csv"
        code, _, _ = _run(["predict", "--model", str(model), "--data", str(queries), "--format", "csv",
                           "--out", str(out_file)], capsys)
        assert code == 0
        rows = list(csv.DictReader(out_file.open()))
        assert [r["predicted"] for r in rows] == ["bad", "good"]


class TestBenchmarks:
    def test_synthetic(self, capsys):
        code, out, _ = _run(["bench-synthetic", "--cases", "1", "--dims", "4", "--n-train", "5", "--n-valid", "5",
                             "--realizations", "2", "--variant", "B"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["meta"]["seed"] == 1
        assert report["meta"]["flags"]["variants"] == ["B"]
        assert len(report["experiments"]) == 1

    def test_real(self, labeled_csv, capsys):
        code, out, _ = _run(["bench-real", "--data", str(labeled_csv), "--header", "--fraction", "0.5",
                             "--repeats", "2", "--format", "csv"], capsys)
        assert code == 0
        rows = list(csv.DictReader(out.splitlines()))
        assert [r["variant"] for r in rows] == ["A", "B"]
        assert rows[0]["dataset"] == "train"

    def test_loocv_grid_setup(self, capsys):
        code, out, _ = _run(["loocv-grid", "--setup", "uncorrelated", "--d", "3", "--n-per-class", "5", "--grid",
                             "2", "--summary-only"], capsys)
        assert code == 0
        exp = json.loads(out)["experiments"][0]
        assert "accuracy" not in exp and len(exp["evidence_k_fraction"]) == 2

    def test_overfit(self, capsys):
        code, out, _ = _run(["overfit-curve", "--dims", "3", "--n-per-class", "4", "--realizations", "1",
                             "--variant", "B"], capsys)
        assert code == 0
        assert json.loads(out)["experiments"][0]["d"] == 3


class TestErrors:
    def test_structured_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,x,a\n")
        code, out, err = _run(["fit", "--data", str(bad), "--model", str(tmp_path / "m.json")], capsys)
        assert code == 1 and out == ""
        payload = json.loads(err)
        assert payload["error"]["type"] == "CsvFormatError"
        assert "row 1" in payload["error"]["message"]

    def test_grid_needs_one_source(self, capsys):
        code, _, err = _run(["loocv-grid"], capsys)
        assert code == 1
        assert "--data or --setup" in json.loads(err)["error"]["message"]

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["bench-synthetic", "--cases", "11"])
        assert exc.value.code == 2

    def test_missing_model(self, tmp_path, capsys):
        code, _, err = _run(["predict", "--model", str(tmp_path / "none.json"), "--data", str(tmp_path)], capsys)
        assert code == 1
        assert json.loads(err)["error"]["type"] in ("FileNotFoundError", "IsADirectoryError")


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "evidence_da.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("evidence-da ")

import csv
import json

import numpy as np
import pytest

from labelset.cli import main
from labelset.oracle import EXAMPLE3, sample


def write_data(path, n=120, seed=0):
    ds = sample(EXAMPLE3, n, seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(x[0])), repr(float(x[1])), int(y)])
    return ds


@pytest.fixture()
def data(tmp_path):
    p = tmp_path / "data.csv"
    write_data(p)
    return p


def fit(data, out, *extra):
    return main(["fit", "--data", str(data), "--label-col", "label", "--out", str(out), *extra])


class TestPipeline:
    def test_fit_calibrate_predict_evaluate(self, data, tmp_path):
        fo, co, po, eo = (tmp_path / d for d in ("fit", "cal", "pred", "eval"))
        assert fit(data, fo, "--estimator", "knn", "--k", "10", "--split-frac", "0.5", "--seed", "3") == 0
        assert (fo / "model.json").exists() and (fo / "split.json").exists()
        assert main(["calibrate", "--data", str(data), "--label-col", "label", "--model", str(fo / "model.json"),
                     "--split", str(fo / "split.json"), "--alpha", "0.05", "--out", str(co)]) == 0
        doc = json.loads((co / "thresholds.json").read_text())
        assert doc["metadata"]["method"] == "conformal" and len(doc["values"]) == 3
        assert main(["predict", "--data", str(data), "--label-col", "label", "--model", str(fo / "model.json"),
                     "--thresholds", str(co / "thresholds.json"), "--out", str(po)]) == 0
        assert main(["evaluate", "--data", str(data), "--label-col", "label",
                     "--predictions", str(po / "predictions.csv"), "--out", str(eo)]) == 0
        for f in ("metrics.csv", "cooccurrence.csv", "report.txt", "run_config.json"):
            assert (eo / f).exists()

    def test_plugin_and_conformal_both_recorded(self, data, tmp_path):
        fit(data, tmp_path / "f", "--split-frac", "0.5")
        for method in ("plugin", "conformal"):
            out = tmp_path / method
            assert main(["calibrate", "--data", str(data), "--label-col", "label",
                         "--model", str(tmp_path / "f" / "model.json"), "--split", str(tmp_path / "f" / "split.json"),
                         "--method", method, "--alpha", "0.1", "--out", str(out)]) == 0
            assert json.loads((out / "thresholds.json").read_text())["metadata"]["method"] == method

    def test_accretive_writes_trace(self, data, tmp_path):
        fit(data, tmp_path / "f", "--estimator", "logistic", "--lambda", "0.01")
        out = tmp_path / "c"
        assert main(["calibrate", "--data", str(data), "--label-col", "label", "--method", "plugin",
                     "--model", str(tmp_path / "f" / "model.json"), "--alpha", "0.5",
                     "--complete", "accretive", "--out", str(out)]) == 0
        vals = json.loads((out / "thresholds.json").read_text())["values"]
        assert sum(vals) <= 1.0 and (out / "trace.csv").exists()

    def test_logistic_zero_iterations(self, data, tmp_path):
        assert fit(data, tmp_path / "f", "--estimator", "logistic", "--max-iter", "0") == 0
        doc = json.loads((tmp_path / "f" / "model.json").read_text())
        assert np.all(np.array(doc["payload"]["theta"]) == 0)

    def test_include_all_predicts_everything(self, data, tmp_path):
        fit(data, tmp_path / "f")
        t = tmp_path / "t.json"
        t.write_text(json.dumps({"format": "labelset-thresholds", "version": 1, "mode": "class",
                                 "values": ["INCLUDE_ALL"] * 3, "metadata": {}}))
        assert main(["predict", "--data", str(data), "--label-col", "label",
                     "--model", str(tmp_path / "f" / "model.json"), "--thresholds", str(t),
                     "--out", str(tmp_path / "p")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "p" / "predictions.csv")))
        assert rows and all(r["members"] == "1;2;3" for r in rows)

    def test_evaluate_hand_example(self, tmp_path):
        (tmp_path / "d.csv").write_text("x,label\n0,1\n0,1\n0,2\n")
        (tmp_path / "p.csv").write_text("row_id,members,size,bitmask\n0,1,1,1\n1,1;2,2,3\n2,2,1,2\n")
        assert main(["evaluate", "--data", str(tmp_path / "d.csv"), "--label-col", "label",
                     "--predictions", str(tmp_path / "p.csv"), "--out", str(tmp_path / "e")]) == 0
        assert (tmp_path / "e" / "cooccurrence.csv").read_text().splitlines()[1:] == ["1,2,1", "2,1,2"]
        assert "ambiguity,,1.3333333333333333" in (tmp_path / "e" / "metrics.csv").read_text()

    def test_oracle(self, tmp_path):
        out = tmp_path / "o"
        assert main(["oracle", "example3", "--coverage", "0.9", "--complete", "accretive",
                     "--n-mc", "5000", "--resolution", "30", "--curve-grid", "0.8,0.9", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert {"ambiguity", "thresholds", "null_probability"} <= summary.keys()
        for f in ("trace.csv", "raster.csv", "curve.csv", "thresholds.json"):
            assert (out / f).exists()


class TestErrors:
    def test_missing_label_column(self, data, tmp_path, capsys):
        assert main(["fit", "--data", str(data), "--label-col", "species", "--out", str(tmp_path / "f")]) == 3
        assert "species" in capsys.readouterr().err

    def test_alpha_list_length(self, data, tmp_path):
        fit(data, tmp_path / "f")
        code = main(["calibrate", "--data", str(data), "--label-col", "label", "--method", "plugin",
                     "--model", str(tmp_path / "f" / "model.json"), "--alpha", "0.1,0.2",
                     "--out", str(tmp_path / "c")])
        assert code == 2

    def test_leakage_is_validation_error(self, data, tmp_path):
        fit(data, tmp_path / "f")
        code = main(["calibrate", "--data", str(data), "--label-col", "label", "--split-frac", "0.5",
                     "--model", str(tmp_path / "f" / "model.json"), "--alpha", "0.1", "--out", str(tmp_path / "c")])
        assert code == 2

    def test_version_mismatch(self, data, tmp_path):
        fit(data, tmp_path / "f")
        p = tmp_path / "f" / "model.json"
        doc = json.loads(p.read_text())
        doc["version"] = 99
        p.write_text(json.dumps(doc))
        code = main(["calibrate", "--data", str(data), "--label-col", "label", "--method", "plugin",
                     "--model", str(p), "--alpha", "0.1", "--out", str(tmp_path / "c")])
        assert code == 4

    def test_bad_rows(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("x,label\n1,1\nabc,2\n")
        assert fit(tmp_path / "d.csv", tmp_path / "f") == 3
        assert "line 3" in capsys.readouterr().err


class TestRerun:
    def test_bit_identical(self, data, tmp_path):
        fit(data, tmp_path / "f", "--estimator", "kernel", "--split-frac", "0.5", "--seed", "9")
        a = tmp_path / "a"
        args = ["calibrate", "--data", str(data), "--label-col", "label",
                "--model", str(tmp_path / "f" / "model.json"), "--split", str(tmp_path / "f" / "split.json"),
                "--alpha", "0.1", "--complete", "accretive", "--out", str(a)]
        assert main(args) == 0
        b = tmp_path / "b"
        assert main(["rerun", str(a / "run_config.json"), "--out", str(b)]) == 0
        for f in ("thresholds.json", "trace.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_oracle_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["oracle", "EXAMPLE1", "--alpha", "0.05", "--coverage-mode", "total", "--n-mc", "3000",
              "--resolution", "50", "--out", str(a)])
        assert main(["rerun", str(a / "run_config.json"), "--out", str(b)]) == 0
        assert (a / "raster.csv").read_bytes() == (b / "raster.csv").read_bytes()
        assert json.loads((a / "summary.json").read_text())["ambiguity"] == \
            json.loads((b / "summary.json").read_text())["ambiguity"]

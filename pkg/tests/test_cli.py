import json

import numpy as np
import pytest

from mlsvm.cli import report_schema, run_cli, strip_timing, validate_report

SMALL = ["--m-pos", "40", "--m-neg", "40", "--coarsest-size", "60", "--force"]


@pytest.fixture
def twonorm_csv(tmp_path):
    path = tmp_path / "t.csv"
    assert run_cli(["gen", "--kind", "twonorm", "--n", "500", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_gen_then_cv_reports_gmean(tmp_path, twonorm_csv):
    rep = tmp_path / "cv.json"
    code = run_cli(["cv", "--data", str(twonorm_csv), "--folds", "3", "--seed", "1",
                    "--report", str(rep), *SMALL])
    assert code == 0
    body = json.loads(rep.read_text())
    assert 0.0 <= body["gmean"] <= 1.0
    assert len(body["per_fold"]) == 3
    validate_report(body)


def test_train_then_predict(tmp_path, twonorm_csv):
    model, rep, out = tmp_path / "m.txt", tmp_path / "r.json", tmp_path / "p.csv"
    hier = tmp_path / "h.json"
    assert run_cli(["train", "--data", str(twonorm_csv), "--model-out", str(model),
                    "--report", str(rep), "--dump-hierarchy", str(hier), *SMALL]) == 0
    body = json.loads(rep.read_text())
    assert body["depth"] == json.loads(hier.read_text())["depth"]
    rt = body["runtime"]
    assert rt["total_seconds"] == pytest.approx(sum(rt["timings"].values()))
    assert body["us_per_point"] == pytest.approx(body["total_seconds"] * 1e6 / 500)
    assert run_cli(["predict", "--model", str(model), "--data", str(twonorm_csv),
                    "--out", str(out), "--report", str(tmp_path / "pr.json")]) == 0
    pred = np.loadtxt(out, delimiter=",", skiprows=1)
    truth = np.loadtxt(twonorm_csv, delimiter=",")[:, -1]
    assert np.all(np.isfinite(pred[:, 1]))
    assert np.mean(pred[:, 0] == truth) >= 0.5


def test_missing_data_is_usage_error(capsys):
    assert run_cli(["train", "--model-out", "x"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert run_cli(["gen", "--kind", "twonorm", "--n", "10", "--seed", "1", "--out", "x", "--bogus"]) == 2


def test_cckf_with_fraction_is_rejected(twonorm_csv, capsys):
    code = run_cli(["cv", "--data", str(twonorm_csv), "--seed", "1", "--validation", "cckf",
                    "--val-fraction", "0.2"])
    assert code == 2
    assert "cckf" in capsys.readouterr().err


def test_cv_needs_seed(twonorm_csv):
    assert run_cli(["cv", "--data", str(twonorm_csv)]) == 2


def test_out_of_range_parameter_needs_force(twonorm_csv, tmp_path):
    assert run_cli(["train", "--data", str(twonorm_csv), "--model-out", str(tmp_path / "m"),
                    "--Q", "0.9"]) == 2


def test_runtime_failure_exit_code(tmp_path):
    assert run_cli(["train", "--data", str(tmp_path / "missing.csv"), "--model-out", "m"]) == 1


def test_knn_cache_is_used_by_training(tmp_path, twonorm_csv, monkeypatch):
    cache = tmp_path / "cache"
    assert run_cli(["knn", "--data", str(twonorm_csv), "--k", "10", "--cache-out", str(cache)]) == 0
    files = sorted(p.name for p in cache.iterdir())
    assert len(files) == 2
    monkeypatch.setenv("MLSVM_CACHE_DIR", str(cache))
    assert run_cli(["train", "--data", str(twonorm_csv), "--model-out", str(tmp_path / "m"),
                    "--report", str(tmp_path / "r.json"), *SMALL]) == 0
    assert sorted(p.name for p in cache.iterdir()) == files


def test_reports_repeat_exactly(tmp_path, twonorm_csv):
    bodies = []
    for i, threads in enumerate(("1", "3", "1")):
        rep = tmp_path / f"r{i}.json"
        assert run_cli(["train", "--data", str(twonorm_csv), "--model-out", str(tmp_path / f"m{i}"),
                        "--report", str(rep), "--threads", threads, *SMALL]) == 0
        bodies.append(json.dumps(strip_timing(json.loads(rep.read_text())), sort_keys=True))
    assert bodies[0] == bodies[1] == bodies[2]


def test_schema_requires_metric_fields():
    schema = report_schema()
    assert set(schema["$defs"]["metrics"]["required"]) == {"sn", "sp", "gmean", "acc", "ppv", "f1"}
    import jsonschema

    bad = {"command": "train", "config": {}, "n": 1, "dim": 1, "final": {}}
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)

import json
import subprocess
import sys

import numpy as np
import pytest

from watl.cli import main
from watl.dataio import write_dataset
from watl.frechet import baseline_predict
from watl.simulation import generate_study
from watl.study import Study
from watl.wasserstein import make_grid


def read_predictions(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return header, rows


@pytest.fixture
def query_file(tmp_path):
    p = tmp_path / "query.csv"
    p.write_text("x0\n0.2\n0.9\n")
    return p


@pytest.fixture
def five_source_manifest(tmp_path):
    g = make_grid(50)
    target = generate_study(0, 0.0, 200, seed=0, grid=g)
    sources = [generate_study(k + 1, p, 200, seed=0, grid=g) for k, p in enumerate((0.1, 0.1, 0.8, 0.8, 0.8))]
    return write_dataset(target, sources, tmp_path / "data")


def test_simulate_writes_csv_and_json(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--k", "5", "--n0", "200", "--tau", "100", "--psi", "0.1,0.2,0.3,0.4,0.5",
                 "--reps", "3", "--seed", "7", "--out", str(out)])
    assert code == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "n0,tau,K,psi,estimator,mean_rmspr,sd_rmspr,reps"
    names = {line.split(",")[4] for line in lines[1:]}
    assert {"watl", "only_target"} <= names
    report = json.loads((out / "report.json").read_text())
    assert report["cells"][0]["config"]["seed"] == 7
    assert "only_target" in capsys.readouterr().out


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--k", "2", "--psi", "0.1,0.3", "--n0", "60,80", "--tau", "30", "--reps", "2",
            "--n-eval", "10", "--grid-size", "30", "--estimators", "watl,awatl,only_target", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("results.csv", "report.json", "selection.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("args", [
    ["simulate", "--k", "3", "--psi", "0.1,0.2", "--out", "x"],
    ["simulate", "--estimators", "watl,bogus", "--out", "x"],
    ["simulate", "--n0", "ten", "--out", "x"],
    ["simulate", "--k", "1", "--psi", "1.5", "--out", "x"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_1(args, capsys):
    assert main(args) == 1
    assert "usage error" in capsys.readouterr().err


def test_fit_predict_target_only_lambda_zero_matches_baseline(tmp_path, query_file):
    g = make_grid(20)
    target = generate_study(0, 0.0, 40, seed=2, grid=g)
    manifest = write_dataset(target, [], tmp_path / "d")
    out = tmp_path / "o"
    assert main(["fit-predict", "--manifest", str(manifest), "--query", str(query_file),
                 "--lambda", "0", "--out", str(out)]) == 0
    header, rows = read_predictions(out / "predictions.csv")
    assert header[0] == "x0" and header[1:] == [f"q{j}" for j in range(20)]
    for row in rows:
        np.testing.assert_allclose(row[1:], baseline_predict(target, [row[0]]).values, atol=1e-12, rtol=0)


def test_fit_predict_adaptive_selects_informative_sources(tmp_path, five_source_manifest, query_file):
    out = tmp_path / "o"
    assert main(["fit-predict", "--manifest", str(five_source_manifest), "--query", str(query_file),
                 "--adaptive", "--l", "2", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["L"] == 2
    assert report["queries"][1]["selected"] == [1, 2]
    assert len(report["queries"][1]["discrepancies"]) == 5
    assert report["cv_trace"] and {"lam", "score"} <= set(report["cv_trace"][0])


def test_fit_predict_is_byte_identical(tmp_path, five_source_manifest, query_file):
    args = ["fit-predict", "--manifest", str(five_source_manifest), "--query", str(query_file), "--adaptive"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("predictions.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_predict_local_mode(tmp_path, five_source_manifest, query_file):
    out = tmp_path / "o"
    assert main(["fit-predict", "--manifest", str(five_source_manifest), "--query", str(query_file),
                 "--mode", "local", "--bandwidth", "0.2", "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["bandwidth"] == 0.2


def test_fit_predict_local_multivariate_is_usage_error(tmp_path, capsys):
    g = make_grid(10)
    X = np.random.default_rng(0).uniform(size=(12, 2))
    t = Study(X, quantiles=np.tile(g.nodes, (12, 1)), grid=g, label="t", role="target")
    manifest = write_dataset(t, [], tmp_path / "d")
    q = tmp_path / "q.csv"
    q.write_text("a,b\n0.1,0.2\n")
    code = main(["fit-predict", "--manifest", str(manifest), "--query", str(q), "--mode", "local",
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "scalar predictor" in capsys.readouterr().err


def test_fit_predict_data_error_exit_2(tmp_path, query_file, capsys):
    (tmp_path / "x.csv").write_text("x\n0.1\n")
    (tmp_path / "q.csv").write_text("q0,q1,q2\n0.3,0.1,0.2\n")
    (tmp_path / "m.json").write_text(json.dumps({"studies": [
        {"label": "t", "role": "target", "covariates": "x.csv", "responses": "q.csv",
         "response_kind": "quantile_grid"}]}))
    code = main(["fit-predict", "--manifest", str(tmp_path / "m.json"), "--query", str(query_file),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "q.csv:2" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_fit_predict_numerical_failure_exit_3(tmp_path, query_file):
    g = make_grid(10)
    X = np.array([[0.0], [0.0], [0.01], [1.0], [1.0], [1.0]])
    t = Study(X, quantiles=np.tile(g.nodes, (6, 1)), grid=g, label="t", role="target")
    manifest = write_dataset(t, [], tmp_path / "d")
    q = tmp_path / "q.csv"
    q.write_text("x0\n0.5\n")
    code = main(["fit-predict", "--manifest", str(manifest), "--query", str(q), "--mode", "local",
                 "--kernel", "epanechnikov", "--bandwidth", "0.1", "--lambda", "0", "--out", str(tmp_path / "o")])
    assert code == 3


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    for name in ("grid invariants", "weight identities", "prox oracle", "projection oracle",
                 "degeneracy", "monte carlo smoke"):
        assert f"PASS {name}" in out


def test_selftest_corrupt_grid_fails(capsys):
    assert main(["selftest", "--inject", "corrupt-grid"]) != 0
    assert "FAIL grid invariants: nodes are not strictly increasing" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "watl", "simulate", "--k", "2", "--psi", "0.1", "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1 and "--psi" in proc.stderr


def test_lambda_grid_choices(tmp_path, capsys):
    base = ["simulate", "--k", "1", "--psi", "0.2", "--n0", "40", "--tau", "40", "--reps", "1",
            "--n-eval", "5", "--grid-size", "20", "--out", str(tmp_path)]
    assert main(base + ["--lambda-grid", "coarse"]) == 0
    grid = json.loads((tmp_path / "report.json").read_text())["cells"][0]["config"]["lambda_grid"]
    assert grid[-1] == 3.0 and len(grid) == 31
    assert main(base + ["--lambda-grid", "0,0.01,0.02"]) == 0
    assert main(base + ["--lambda-grid", "wide"]) == 1

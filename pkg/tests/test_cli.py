import json

import numpy as np
import pandas as pd
import pytest

from pram.cli import main

A_EST = {"schema": 1, "kind": "logistic", "response": "y", "covariates": ["x"], "sensitive_column": "y_pram"}


@pytest.fixture
def files(tmp_path, g):
    n = 1500
    x = g.normal(0.5, 1, n)
    y = (g.random(n) < 1 / (1 + np.exp(-(-1 + 1.5 * x)))).astype(int)
    pd.DataFrame({"x": x, "y": y, "lab": np.where(y == 1, "yes", "no")}).to_csv(tmp_path / "d.csv", index=False)
    (tmp_path / "P.csv").write_text("0.9,0.1\n0.1,0.9\n")
    (tmp_path / "I.csv").write_text("1,0\n0,1\n")
    (tmp_path / "bad.csv").write_text("0.9,0.2\n0.2,0.8\n")
    (tmp_path / "e.json").write_text(json.dumps(A_EST))
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def perturb(capsys, d, matrix="P.csv", seed=3, out="p.csv"):
    return run(capsys, "perturb", "--data", d / "d.csv", "--sensitive", "y", "--levels", 2,
               "--matrix", d / matrix, "--seed", seed, "--out", d / out)


def test_perturb_roundtrip(files, capsys):
    code, out, _ = perturb(capsys, files)
    assert code == 0
    summary = json.loads(out)
    assert summary["K"] == 2 and summary["diagonal"] == [0.9, 0.9]
    frame = pd.read_csv(files / "p.csv")
    assert len(frame) == 1500 and list(frame.columns) == ["x", "y", "lab", "y_pram"]
    assert 0.05 < (frame["y"] != frame["y_pram"]).mean() < 0.15


def test_perturb_is_byte_reproducible(files, capsys):
    perturb(capsys, files, out="a.csv")
    perturb(capsys, files, out="b.csv")
    run(capsys, "--threads", 4, "perturb", "--data", files / "d.csv", "--sensitive", "y", "--levels", 2,
        "--matrix", files / "P.csv", "--seed", 3, "--out", files / "c.csv")
    assert (files / "a.csv").read_bytes() == (files / "b.csv").read_bytes() == (files / "c.csv").read_bytes()


def test_perturb_seed_from_env(files, capsys, monkeypatch):
    monkeypatch.setenv("PRAM_SEED", "3")
    code, _, _ = run(capsys, "perturb", "--data", files / "d.csv", "--sensitive", "y", "--levels", 2,
                     "--matrix", files / "P.csv", "--out", files / "env.csv")
    assert code == 0
    perturb(capsys, files, out="seed.csv")
    assert (files / "env.csv").read_bytes() == (files / "seed.csv").read_bytes()


def test_perturb_recode(files, capsys):
    code, out, _ = run(capsys, "perturb", "--data", files / "d.csv", "--sensitive", "lab", "--recode", "--levels", 2,
                       "--matrix", files / "P.csv", "--seed", 1, "--out", files / "r.csv")
    assert code == 0
    assert json.loads(out)["recode"] == {"no": 0, "yes": 1}
    assert set(pd.read_csv(files / "r.csv")["lab_pram"]) <= {"no", "yes"}


@pytest.mark.parametrize(
    "args, status, code",
    [
        (["--matrix", "bad.csv"], 2, "NonStochastic"),
        (["--sensitive", "nope"], 2, "UsageError"),
        (["--sensitive", "lab"], 2, "UsageError"),
        (["--data", "missing.csv"], 1, "IOError"),
        (["--levels", "3"], 2, "UsageError"),
    ],
)
def test_perturb_errors(files, capsys, args, status, code):
    base = {"--data": "d.csv", "--sensitive": "y", "--levels": "2", "--matrix": "P.csv"}
    for flag, value in zip(args[::2], args[1::2]):
        base[flag] = value
    argv = ["perturb", "--seed", "1", "--out", files / "o.csv"]
    for flag, value in base.items():
        argv += [flag, files / value if value.endswith(".csv") else value]
    got, _, err = run(capsys, *argv)
    assert got == status
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(f"pram: error[{code}]:")
    if "nope" in args:
        assert "nope" in lines[0]


def test_estimate_identity_matches_naive(files, capsys):
    perturb(capsys, files, matrix="I.csv")
    common = ["--data", files / "p.csv", "--estimand", files / "e.json", "--with-se", "none"]
    _, a, _ = run(capsys, "estimate", "--method", "proposed", "--matrix", files / "I.csv", *common)
    _, b, _ = run(capsys, "estimate", "--method", "naive", *common)
    np.testing.assert_allclose(json.loads(a)["beta_hat"], json.loads(b)["beta_hat"], atol=1e-10)


def test_estimate_outputs(files, capsys):
    perturb(capsys, files)
    code, out, _ = run(capsys, "estimate", "--data", files / "p.csv", "--matrix", files / "P.csv",
                       "--estimand", json.dumps(A_EST), "--with-se", "both", "-M", 100, "--seed", 2)
    assert code == 0
    res = json.loads(out)
    assert res["method"] == "proposed" and res["variance_method"] == "resample"
    ratio = np.array(res["plugin_std_errors"]) / np.array(res["resample_std_errors"])
    assert np.all(np.abs(ratio - 1) < 0.25)
    assert res["diagnostics"]["converged"]
    code, out, _ = run(capsys, "estimate", "--data", files / "p.csv", "--matrix", files / "P.csv",
                       "--estimand", files / "e.json", "--method", "model1", "--latent-family", "probit")
    assert code == 0 and json.loads(out)["covariance"] is None


def test_estimate_errors(files, capsys):
    perturb(capsys, files)
    code, _, err = run(capsys, "estimate", "--data", files / "p.csv", "--estimand", files / "e.json", "--method", "oracle")
    assert code == 2 and "--original" in err
    code, _, _ = run(capsys, "estimate", "--data", files / "p.csv", "--estimand", files / "e.json")
    assert code == 2
    bad = dict(A_EST, schema=7)
    code, _, err = run(capsys, "estimate", "--data", files / "p.csv", "--matrix", files / "P.csv", "--estimand", json.dumps(bad))
    assert code == 2 and "schema" in err


def test_oracle_with_original_column(files, capsys):
    perturb(capsys, files)
    code, out, _ = run(capsys, "estimate", "--data", files / "p.csv", "--estimand", files / "e.json",
                       "--method", "oracle", "--original", "y", "--out", files / "o.json")
    assert code == 0 and out == ""
    assert json.loads((files / "o.json").read_text())["method"] == "oracle"


def test_variance_and_recover(files, capsys):
    perturb(capsys, files)
    code, out, _ = run(capsys, "variance", "--data", files / "p.csv", "--matrix", files / "P.csv",
                       "--estimand", files / "e.json", "--method", "plugin")
    assert code == 0 and json.loads(out)["variance_method"] == "plugin"
    code, out, _ = run(capsys, "recover-freq", "--data", files / "p.csv", "--sensitive", "y_pram", "--levels", 2,
                       "--matrix", files / "P.csv", "--project-simplex")
    res = json.loads(out)
    assert code == 0 and abs(sum(res["recovered"]) - 1) < 1e-12 and "projected" in res


def test_simulate_smoke_and_determinism(tmp_path, capsys):
    argv = ["simulate", "--scenario", "A1", "--n", "300", "--p", "0.9", "-R", 10, "-M", 50, "--seed", 7]
    code, out, _ = run(capsys, "--threads", 1, *argv, "--out", tmp_path / "a.csv")
    assert code == 0 and json.loads(out)["replicates"] == 10
    run(capsys, "--threads", 3, *argv, "--out", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    frame = pd.read_csv(tmp_path / "a.csv")
    assert set(frame["method"]) == {"proposed", "oracle", "naive", "model1", "model2"}
    assert (frame["R"] == 10).all()
    assert json.loads((tmp_path / "a.json").read_text())


def test_simulate_unknown_scenario(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--scenario", "Q9", "--out", tmp_path / "x.csv")
    assert code == 2 and err.startswith("pram: error[UsageError]")

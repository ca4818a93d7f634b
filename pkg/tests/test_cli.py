import csv
import json
import logging

import numpy as np
import pytest

from atbp import __version__
from atbp.cli import fit_from_json, main, read_population, resolve_config, build_parser
from atbp.errors import InputError
from atbp.predict import TargetFunction, atbp_predict
from atbp.simlab import ScenarioSpec, generate_population


def write_population(path, drop_column=None, full_area=True):
    sim = generate_population(ScenarioSpec("A", lam=0.3, m=5, N=30, groups=(5, 10, 15, 20, 25), seed=1), 0)
    pop = sim.population
    cols = ["area_id", "unit_id", "sampled", "y", "x_1", "x_2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c for c in cols if c != drop_column])
        for k in range(pop.X.shape[0]):
            area = f"a{pop.codes[k]}"
            sampled = bool(pop.sampled[k])
            if full_area and pop.codes[k] == 4:
                sampled = True
            y = pop.y[k] if pop.sampled[k] else sim.Y[pop.codes[k], pop.unit_ids[k]]
            row = {"area_id": area, "unit_id": f"u{k}", "sampled": int(sampled), "y": repr(float(y)) if sampled else "",
                   "x_1": "1", "x_2": repr(float(pop.X[k, 1]))}
            w.writerow([row[c] for c in cols if c != drop_column])
    return path


def rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    pop = write_population(d / "pop.csv")
    assert main(["fit", str(pop), "--out", str(d / "fit.json"), "--seed", "3"]) == 0
    return d


def test_fit_outputs(workspace):
    fit = json.loads((workspace / "fit.json").read_text())
    assert fit["schema_version"] == 1
    assert fit["family"]["name"] == "dp"
    assert np.isfinite(fit["loglik"])
    assert fit["aic_per_unit"] == pytest.approx(fit["aic"] / fit["n_units"])
    assert set(fit["estimates"]["lambda"]) == {"estimate", "se"}
    header, res = rows(fit["residuals_file"])
    assert header.startswith(f"# atbp {__version__} config_sha256=")
    assert len(res) == 5 + 10 + 15 + 20 + 30


def test_fit_summary_format(workspace, capsys):
    assert main(["fit", str(workspace / "pop.csv"), "--out", str(workspace / "fit2.json")]) == 0
    out = capsys.readouterr().out
    assert "lambda = " in out and "(" in out and "AIC" in out


def test_identity_family_runs(workspace):
    assert main(["fit", str(workspace / "pop.csv"), "--family", "identity", "--out", str(workspace / "fi.json")]) == 0


def test_predict_matches_library(workspace):
    out = workspace / "pred.csv"
    assert main(["predict", str(workspace / "pop.csv"), "--fit", str(workspace / "fit.json"), "--target", "indicator",
                 "--z", "2.0", "--seed", "5", "--out", str(out)]) == 0
    header, pred = rows(out)
    assert "seed=5" in header
    model, p = fit_from_json(workspace / "fit.json")
    pop = read_population(workspace / "pop.csv", p)
    lib = atbp_predict(model, pop, TargetFunction("indicator", 2.0), 100, 5)
    assert [r["mu_hat"] for r in pred] == [repr(float(v)) for v in lib.mu]
    assert all(0 <= float(r["mu_hat"]) <= 1 for r in pred)
    full = pred[-1]
    assert full["n_i"] == full["N_i"] == "30"
    sl = pop.units(4)
    assert float(full["mu_hat"]) == np.mean(pop.y[sl] < 2.0)
    assert float(full["mc_se"]) == 0.0


def test_predict_deterministic(workspace):
    args = ["predict", str(workspace / "pop.csv"), "--fit", str(workspace / "fit.json"), "--target", "indicator"]
    main(args + ["--out", str(workspace / "p1.csv")])
    main(args + ["--out", str(workspace / "p2.csv")])
    assert (workspace / "p1.csv").read_text() == (workspace / "p2.csv").read_text()


def test_interval_with_stub_bootstrap(workspace, caplog):
    out = workspace / "int.csv"
    with caplog.at_level(logging.WARNING):
        code = main(["interval", str(workspace / "pop.csv"), "--fit", str(workspace / "fit.json"), "--target",
                     "indicator", "--calibrate", "--bootstrap", "1", "--L-post", "200", "--out", str(out)])
    assert code == 0
    assert any("too few" in r.message for r in caplog.records)
    _, ints = rows(out)
    naive = [r for r in ints if r["method"] == "naive"]
    cal = [r for r in ints if r["method"] == "calibrated"]
    assert len(naive) == len(cal) == 5
    assert all(r["a_star"] == "" for r in naive)
    assert all(0 < float(r["a_star"]) < 1 for r in cal)
    assert all(float(r["lower"]) <= float(r["upper"]) for r in ints)


def test_missing_column_exit_2(tmp_path, capsys):
    pop = write_population(tmp_path / "bad.csv")
    text = pop.read_text().replace("x_2", "x_3", 1)
    pop.write_text(text)
    assert main(["fit", str(pop), "--out", str(tmp_path / "f.json")]) == 2
    assert "'x_2'" in capsys.readouterr().err
    pop.write_text(text.replace("area_id", "region", 1))
    assert main(["fit", str(pop), "--out", str(tmp_path / "f.json")]) == 2
    assert "'area_id'" in capsys.readouterr().err


def test_predict_rejects_wrong_covariates(workspace, tmp_path, capsys):
    pop = write_population(tmp_path / "narrow.csv", drop_column="x_2")
    assert main(["predict", str(pop), "--fit", str(workspace / "fit.json"), "--out", str(tmp_path / "p.csv")]) == 2
    assert "x_2" in capsys.readouterr().err


def test_bad_rows_exit_2(tmp_path, capsys):
    path = tmp_path / "p.csv"
    path.write_text("area_id,unit_id,sampled,y,x_1\na,1,1,abc,1\n")
    assert main(["fit", str(path), "--out", str(tmp_path / "f.json")]) == 2
    assert "y" in capsys.readouterr().err
    path.write_text("area_id,unit_id,sampled,y,x_1\na,1,2,1.0,1\n")
    assert main(["fit", str(path), "--out", str(tmp_path / "f.json")]) == 2


def test_simulate_reproducible(tmp_path):
    args = ["simulate", "--scenario", "A", "--lambda", "0.2", "--reps", "1", "--seed", "42", "--m", "5",
            "--threads", "1"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("prediction_rmse.csv", "prediction_rmse.json"):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
    header, table = rows(tmp_path / "a" / "prediction_rmse.csv")
    assert header.startswith("# atbp") and "seed=42" in header
    assert len(table) == 5
    assert list(table[0]) == ["group", "n_i", "ATP", "TP", "EBP", "DE"]


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1}))
    parser = build_parser()
    args = parser.parse_args(["fit", "x.csv", "--config", str(cfg)])
    assert resolve_config(args).seed == 1
    monkeypatch.setenv("ATBP_SEED", "2")
    assert resolve_config(args).seed == 2
    args = parser.parse_args(["fit", "x.csv", "--config", str(cfg), "--seed", "3"])
    assert resolve_config(args).seed == 3


def test_config_validation(tmp_path):
    parser = build_parser()
    cfg = tmp_path / "c.json"
    for bad in ({"bogus": 1}, {"alpha": 1.5}, {"B": 0}, {"seed": -1}, {"target": {"kind": "median"}}):
        cfg.write_text(json.dumps(bad))
        with pytest.raises(InputError):
            resolve_config(parser.parse_args(["fit", "x.csv", "--config", str(cfg)]))

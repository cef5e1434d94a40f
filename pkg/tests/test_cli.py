import json
import subprocess
import sys

import numpy as np
import pytest

from micselect.cli import SEED_ENV, main, replay_argv
from micselect.core import Dataset
from micselect.experiments import DEFAULT_TRUTH
from micselect.ingest import Schema, ingest_csv
from micselect.simulation import RngStream, sample_baker, sample_vonmises2, simulate_ar_baker, write_csv


@pytest.fixture(scope="module")
def series_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "series.csv"
    return write_csv(simulate_ar_baker(3000, DEFAULT_TRUTH["ar_select"], RngStream(7, 0)), path)


@pytest.fixture(scope="module")
def wind_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "wind.csv"
    return write_csv(sample_vonmises2(300, DEFAULT_TRUTH["vonmises_select"], RngStream(8, 0)), path)


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def run(argv, tmp_path, name="r.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_module_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "micselect", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "select" in proc.stdout


@pytest.mark.parametrize("argv", [
    ["select", "--family", "ar-baker", "--max-order", "3", "--input", "x.csv", "--bogus"],
    ["select", "--family", "ar-baker", "--input", "x.csv"],
    ["fit", "--family", "gamma", "--input", "x.csv"],
    ["nope"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_semantic_usage_errors_exit_1(wind_csv, series_csv, tmp_path):
    assert main(["select", "--family", "vonmises", "--max-order", "3", "--input", str(wind_csv)]) == 1
    assert main(["select", "--family", "vonmises", "--max-order", "2", "--criterion", "bic",
                 "--input", str(wind_csv)]) == 1
    assert main(["bench", "--trials", "5"]) == 1
    assert main(["forecast", "--input", str(series_csv)]) == 1


def test_bad_env_seed_exit_1(monkeypatch, series_csv):
    monkeypatch.setenv(SEED_ENV, "seven")
    assert main(["fit", "--family", "ar-baker", "--input", str(series_csv)]) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert main(["fit", "--family", "baker", "--input", str(tmp_path / "absent.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("y\n1.0\nabc\n")
    assert main(["fit", "--family", "baker", "--input", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err
    neg = tmp_path / "neg.csv"
    neg.write_text("x\n1\n2\n-1\n3\n")
    assert main(["fit", "--family", "ar-baker", "--input", str(neg), "--transform", "log"]) == 2


def test_select_report(series_csv, tmp_path):
    code, rep = run(["select", "--family", "ar-baker", "--input", str(series_csv), "--max-order", "4",
                     "--criterion", "mic2", "--criterion", "bic", "--seed", "7"], tmp_path)
    assert code == 0 and rep["schema_version"] == 1
    cfg = rep["config"]
    assert cfg["command"] == "select" and cfg["seed"] == {"value": 7, "source": "flag"}
    assert cfg["args"]["max_order"] == 4 and cfg["fit_config"]["optimizer"] == "bfgs"
    assert set(rep["selection"]) == {"mic2", "bic"}
    assert set(rep["selection"]["mic2"]["values"]) == {"1", "2", "3", "4"}
    assert [c["k"] for c in rep["candidates"]] == [1, 2, 3, 4]
    assert all(c["excluded"] for c in rep["candidates"] if str(c["k"]) not in rep["selection"]["mic2"]["values"])


def test_env_seed_is_echoed(monkeypatch, series_csv, tmp_path):
    monkeypatch.setenv(SEED_ENV, "11")
    code, rep = run(["fit", "--family", "ar-baker", "--order", "2", "--input", str(series_csv)], tmp_path)
    assert code == 0
    assert rep["config"]["seed"] == {"value": 11, "source": f"env:{SEED_ENV}"}


def test_replay_reproduces_select(series_csv, tmp_path):
    _, first = run(["select", "--family", "ar-baker", "--input", str(series_csv), "--max-order", "3",
                    "--criterion", "mic1", "--criterion", "gicc"], tmp_path, "a.json")
    assert main(["replay", str(tmp_path / "a.json"), "--out", str(tmp_path / "b.json")]) == 0
    second = json.loads((tmp_path / "b.json").read_text())
    assert second["selection"] == first["selection"]
    assert second["candidates"] == first["candidates"]
    assert second["config"]["seed"]["value"] == first["config"]["seed"]["value"] == 0


def test_replay_argv_pins_seed_and_drops_outputs():
    body = {"config": {"argv": ["fit", "--family", "baker", "--input", "y.csv", "--out", "r.json"],
                       "seed": {"value": 3, "source": "default"}}}
    assert replay_argv(body, "new.json") == ["fit", "--family", "baker", "--input", "y.csv", "--seed", "3",
                                             "--out", "new.json"]


def test_replay_bad_report_exit_2(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("{}")
    assert main(["replay", str(bad)]) == 2


def test_fit_vonmises_reports_both_variants(wind_csv, tmp_path):
    md = tmp_path / "fit.md"
    code, rep = run(["fit", "--family", "vonmises", "--variant", "m2", "--input", str(wind_csv),
                     "--markdown", str(md)], tmp_path)
    assert code == 0
    comp = rep["comparison"]
    assert set(comp) == {"vonmises-m1", "vonmises-m2"}
    m1, m2 = comp["vonmises-m1"], comp["vonmises-m2"]
    assert m2["mic1"] > m1["mic1"] and m2["mic2"] > m1["mic2"]
    assert "MIC2" in md.read_text()


def test_fit_baker_bootstrap_moments(tmp_path):
    path = write_csv(Dataset.unconditional(sample_baker(600, DEFAULT_TRUTH["baker_fit"], RngStream(9, 0))),
                     tmp_path / "y.csv")
    code, rep = run(["fit", "--family", "baker", "--input", str(path), "--bootstrap", "50", "--seed", "1"],
                    tmp_path)
    assert code == 0
    assert set(rep["fit"]["params"]) == {"mu", "s", "alpha", "k"}
    assert rep["residual_moments"]["B"] == 50 and rep["residual_moments"]["se_kurt"] > 0


def test_fit_warnings_reach_stderr_and_report(series_csv, tmp_path, capsys):
    code, rep = run(["fit", "--family", "ar-baker", "--order", "3", "--input", str(series_csv),
                     "--max-iter", "1"], tmp_path)
    assert code == 0
    assert any("not converged" in w for w in rep["warnings"])
    assert "not converged" in capsys.readouterr().err


def test_simulate_dump_round_trip(tmp_path):
    csv_path = tmp_path / "sim.csv"
    assert main(["simulate", "--scenario", "ar-select", "--n", "250", "--seed", "4",
                 "--dump-csv", str(csv_path)]) == 0
    back = ingest_csv(csv_path, Schema(("x",), "timeseries"))
    expected = simulate_ar_baker(250, DEFAULT_TRUTH["ar_select"], RngStream(4, 0))
    assert np.array_equal(back.observations, expected.observations)


def test_simulate_selection_run(tmp_path):
    code, rep = run(["simulate", "--scenario", "vonmises-select", "--n", "150", "--reps", "2", "--seed", "2",
                     "--criterion", "mic2"], tmp_path)
    assert code == 0
    exp = rep["experiment"]
    assert exp["kind"] == "selection" and exp["config"]["master_seed"] == 2
    assert sum(exp["frequency"]["150"]["mic2"].values()) + exp["excluded"]["150"]["mic2"] == 2


def test_simulate_estimation_run(tmp_path):
    code, rep = run(["simulate", "--scenario", "vonmises-select", "--n", "200", "--reps", "2", "--estimate"],
                    tmp_path)
    assert code == 0
    table = rep["experiment"]["estimates"]["200"]
    assert set(table["params"]) == {"kappa1", "kappa2", "mu1", "mu2", "lambda"}


def test_forecast_orders(series_csv, tmp_path):
    code, rep = run(["forecast", "--input", str(series_csv), "--orders", "1,3", "--horizons", "1,2"], tmp_path)
    assert code == 0
    fc = rep["forecast"]
    assert set(fc["mse"]) == {"AR(1)", "AR(3)"} and fc["reference"] == "AR(1)"
    assert set(fc["mse"]["AR(3)"]) == {"1", "2"}


def test_forecast_by_selection(series_csv, tmp_path):
    code, rep = run(["forecast", "--input", str(series_csv), "--max-order", "3", "--criterion", "mic2"],
                    tmp_path)
    assert code == 0
    k = rep["selection"]["mic2"]["selected"]
    assert f"AR({k}) (mic2)" in rep["forecast"]["mse"]


def test_bench_small_grid(tmp_path):
    code, rep = run(["bench", "--n-grid", "200,400", "--param-dims", "2", "--trials", "11"], tmp_path)
    assert code == 0
    assert set(rep["runtime"]) == {"mic2", "gicc"}
    assert set(rep["runtime"]["gicc"]) == {"200", "400"}


def test_report_to_stdout(series_csv, capsys):
    assert main(["fit", "--family", "ar-baker", "--input", str(series_csv)]) == 0
    assert json.loads(capsys.readouterr().out)["config"]["command"] == "fit"

import json
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from cli import EstimateConfig, SimulateConfig, VolatilityConfig, app, load_run_config
from marketdata import PriceEventSeries, write_price_events_csv
from models import StoppingRule, write_event_series_csv, write_params_json
from multivariate import simulate_mv
from residuals import Gamma, UnitExponential
from univariate import simulate
from volatility import hawkes_vol

runner = CliRunner()

SIM_ARGS = ["--mu", "0.2", "--alpha", "0.5", "--beta", "0.8", "--n-events", "300"]


def _invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


@pytest.fixture
def gamma_csv(tmp_path, reference_params):
    series, _ = simulate(reference_params, Gamma.unit_mean(2.0), None, StoppingRule.events(400), np.random.default_rng(17))
    return write_event_series_csv(series, tmp_path / "events.csv")


def test_simulate_is_byte_identical(tmp_path):
    """Одинаковые зерно и параметры - побайтно одинаковые файлы"""
    for name in ("a", "b"):
        result = _invoke("simulate", *SIM_ARGS, "--seed", 42, "--residual", "gamma", "--shape", 2, "--out-dir", tmp_path / name)
        assert result.exit_code == 0, result.output
    for name in ("events.csv", "lambda.csv", "params.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 42
    assert manifest["command"] == "simulate"


def test_hawkes_and_flex_exp_agree(tmp_path):
    """Модель hawkes и flex с остатками exp дают одни и те же события"""
    for model in ("hawkes", "flex"):
        result = _invoke("simulate", *SIM_ARGS, "--seed", 5, "--model", model, "--out-dir", tmp_path / model)
        assert result.exit_code == 0, result.output
    assert (tmp_path / "hawkes" / "events.csv").read_bytes() == (tmp_path / "flex" / "events.csv").read_bytes()


def test_simulate_requires_seed(tmp_path):
    result = _invoke("simulate", *SIM_ARGS, "--out-dir", tmp_path)
    assert result.exit_code == 2
    assert not (tmp_path / "events.csv").exists()


def test_simulate_rejects_unstable_params(tmp_path):
    result = _invoke("simulate", "--mu", 0.2, "--alpha", 0.9, "--beta", 0.8, "--n-events", 10, "--seed", 1, "--out-dir", tmp_path)
    assert result.exit_code == 1


def test_simulate_from_config_file(tmp_path):
    """Файл key = value, флаг командной строки имеет приоритет"""
    cfg = tmp_path / "run.env"
    cfg.write_text("MU=0.2\nALPHA=0.5\nBETA=0.8\nN_EVENTS=50\nSEED=3\nDIMS=2\nALPHA_CROSS=0.1\n")
    result = _invoke("simulate", "--config", cfg, "--n-events", 80, "--out-dir", tmp_path / "out")
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "out" / "events.csv")
    assert len(frame) == 80
    assert set(frame["type"]) <= {0, 1}
    params = json.loads((tmp_path / "out" / "params.json").read_text(encoding="utf-8"))
    assert params["alpha"] == [[0.5, 0.1], [0.1, 0.5]]


def test_load_run_config_merging(tmp_path):
    cfg = tmp_path / "run.env"
    cfg.write_text("events=data.csv\nmethod=qmle\nunused-key=1\n")
    loaded = load_run_config(EstimateConfig, cfg, {"method": "gmm", "bins": None})
    assert loaded.method == "gmm"
    assert loaded.bins == 50
    assert str(loaded.events) == "data.csv"


def test_config_validation():
    with pytest.raises(ValueError):
        SimulateConfig(mu=0.2, alpha=0.5, beta=0.8, seed=1, n_events=10, horizon=5.0)
    with pytest.raises(ValueError):
        SimulateConfig(mu=0.2, alpha=0.5, beta=0.8, seed=1, n_events=10, model="hawkes", residual="gamma", shape=2.0)
    grid = VolatilityConfig(events="e.csv", dt_grid="0.5, 1;2")
    assert grid.dt_grid == [0.5, 1.0, 2.0]


def test_estimate_qmle_outputs(tmp_path, gamma_csv):
    out = tmp_path / "fit"
    result = _invoke("estimate", "--events", gamma_csv, "--method", "qmle", "--out-dir", out)
    assert result.exit_code == 0, result.output
    fit = json.loads((out / "fit.json").read_text(encoding="utf-8"))
    assert fit["method"] == "qmle"
    assert set(fit["params"]) == {"mu", "alpha", "beta"}
    assert len(pd.read_csv(out / "residuals.csv")) == 400
    qq = pd.read_csv(out / "qq.csv")
    assert list(qq.columns) == ["prob", "empirical", "theoretical", "type"]
    assert (out / "histogram.csv").exists()


def test_estimate_gamma_mle(tmp_path, gamma_csv):
    out = tmp_path / "fit"
    result = _invoke("estimate", "--events", gamma_csv, "--residual", "gamma", "--shape", 1.5, "--no-std-errors", "--out-dir", out)
    assert result.exit_code == 0, result.output
    fit = json.loads((out / "fit.json").read_text(encoding="utf-8"))
    assert "shape" in fit["estimates"]
    assert fit["dists"][0]["family"] == "gamma"


def test_estimate_multistart_requires_seed(tmp_path, gamma_csv):
    result = _invoke("estimate", "--events", gamma_csv, "--n-starts", 3, "--out-dir", tmp_path)
    assert result.exit_code == 2


def test_estimate_too_few_events(tmp_path):
    path = tmp_path / "few.csv"
    path.write_text("time,type,mark\n0.5,0,\n1.0,0,\n")
    result = _invoke("estimate", "--events", path, "--out-dir", tmp_path / "out")
    assert result.exit_code == 1


def test_residuals_command(tmp_path, gamma_csv, reference_params):
    params = write_params_json(reference_params, tmp_path / "params.json")
    out = tmp_path / "res"
    result = _invoke(
        "residuals", "--events", gamma_csv, "--params", params, "--residual", "gamma", "--shape", 2, "--out-dir", out
    )
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "residual_summary.json").read_text(encoding="utf-8"))
    row = summary["types"][0]
    assert row["n"] == 400
    assert row["ks"]["pvalue"] > 0.01


def test_fhs_command(tmp_path, gamma_csv):
    out = tmp_path / "fhs"
    result = _invoke("fhs", "--events", gamma_csv, "--seed", 9, "--n-paths", 3, "--out-dir", out)
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "fhs_summary.json").read_text(encoding="utf-8"))
    assert set(summary) >= {"cutoffs", "observed", "fhs", "hawkes", "fit", "qmle"}
    paths = pd.read_csv(out / "fhs_paths.csv")
    assert sorted(paths["path"].unique()) == [0, 1, 2]


def test_sparsify_from_quotes(tmp_path):
    quotes = tmp_path / "quotes.csv"
    quotes.write_text(
        "time_ns,bid,ask\n"
        "0,100,102\n"
        "100000000,101,103\n"
        "300000000,102,104\n"
        "400000000,101,103\n"
        "600000000,99,100\n"
    )
    out = tmp_path / "sparse"
    result = _invoke("sparsify", "--quotes", quotes, "--window-start", 0, "--window-end", 1, "--dt", 0.5, "--out-dir", out)
    assert result.exit_code == 0, result.output
    sparse = pd.read_csv(out / "sparse.csv")
    assert sparse["time"].tolist() == pytest.approx([0.4, 0.6])
    assert sparse["price"].tolist() == [102.0, 99.5]
    assert json.loads((out / "quality.json").read_text(encoding="utf-8"))["n_events"] == 4


def test_sparsify_requires_single_input(tmp_path):
    result = _invoke("sparsify", "--dt", 0.5, "--out-dir", tmp_path)
    assert result.exit_code == 2


def test_volatility_from_params(tmp_path, symmetric_params):
    params = write_params_json(symmetric_params, tmp_path / "params.json")
    out = tmp_path / "vol"
    result = _invoke("volatility", "--params", params, "--t", 10, "--out-dir", out)
    assert result.exit_code == 0, result.output
    data = json.loads((out / "volatility.json").read_text(encoding="utf-8"))
    assert data["solution"]["hvol"] == pytest.approx(hawkes_vol(symmetric_params, None, 10.0))
    assert all(v < 1e-10 for v in data["equation_residuals"].values())


def test_volatility_single_path_rejected(tmp_path, symmetric_params):
    params = write_params_json(symmetric_params, tmp_path / "params.json")
    result = _invoke("volatility", "--params", params, "--t", 10, "--n-paths", 1, "--seed", 1, "--out-dir", tmp_path)
    assert result.exit_code == 2


@pytest.fixture
def price_tape(tmp_path, symmetric_params):
    """Двумерная модель с единичными скачками, записанная как цены от 1000"""
    series, _ = simulate_mv(
        symmetric_params, UnitExponential(), None, StoppingRule.until(2000.0), np.random.default_rng(29)
    )
    prices = 1000.0 + np.cumsum(np.where(series.types == 0, 1.0, -1.0))
    events = PriceEventSeries(series.times, prices, 1000.0, 0.0, 2000.0)
    return write_price_events_csv(events, tmp_path / "price_events.csv")


def _cv(values):
    values = np.asarray(values, dtype=np.float64)
    return float(np.std(values) / np.mean(values))


@pytest.mark.slow
def test_volatility_sweep_stable_in_dt(tmp_path, price_tape):
    """На мелкой сетке dt оценки и Hvol почти не меняются"""
    out = tmp_path / "sweep"
    result = _invoke(
        "volatility", "--events", price_tape, "--window-start", 0, "--window-end", 2000,
        "--dt", 0.001, "--dt", 0.002, "--dt", 0.004, "--t", 5, "--n-paths", 2, "--seed", 3, "--out-dir", out,
    )
    assert result.exit_code == 0, result.output
    sweep = pd.read_csv(out / "sweep.csv")
    assert sweep["dt"].tolist() == pytest.approx([0.001, 0.002, 0.004])
    for name in ("alpha_self", "alpha_cross", "beta_0", "beta_1"):
        assert _cv(sweep[f"flex_{name}"]) < 0.1, name
        assert np.allclose(sweep[f"flex_{name}"], sweep[name])
    assert _cv(sweep["hvol"]) < 0.1
    assert sweep["mc_vol"].notna().all()


def test_volatility_sweep_skips_one_sided_tape(tmp_path, mocker, symmetric_params):
    """Нет падений цены: строки пишутся без Hvol, расчет по сетке не прерывается"""
    times = np.arange(1.0, 51.0)
    tape = write_price_events_csv(PriceEventSeries(times, 1000.0 + times, 1000.0, 0.0, 60.0), tmp_path / "up.csv")
    fit = mocker.patch("cli.mle_fit", return_value=SimpleNamespace(estimates={"mu_0": 1.0}, params=symmetric_params))
    out = tmp_path / "out"
    result = _invoke("volatility", "--events", tape, "--window-end", 60, "--dt", 0.5, "--dt", 2, "--out-dir", out)
    assert result.exit_code == 0, result.output
    sweep = pd.read_csv(out / "sweep.csv")
    assert sweep["dt"].tolist() == [0.5, 2.0]
    assert sweep["mu_0"].tolist() == [1.0, 1.0]
    assert "hvol" not in sweep.columns
    assert fit.call_count == 2

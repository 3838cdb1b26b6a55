import json

import numpy as np
import pytest

from degfusion.cli import main
from degfusion.io import read_series

SMALL = {
    "scenario": {"n": 2000, "noise_sd_a": 0.002, "noise_sd_b": 0.002},
    "fit": {"family": "smooth", "m": 100},
    "fusion": {"m": [20], "options": {"max_iter": 30, "multistart": False}},
}


@pytest.fixture
def config(tmp_path):
    def make(**changes):
        doc = json.loads(json.dumps(SMALL))
        for key, value in changes.items():
            if isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key] = {**doc[key], **value}
            else:
                doc[key] = value
        p = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*')))}.json"
        p.write_text(json.dumps(doc))
        return str(p)

    return make


def run(*args):
    return main([str(a) for a in args])


def test_simulate_row_counts_and_reproducibility(tmp_path, config):
    out = tmp_path / "run"
    assert run("simulate", "--config", config(), "--out", out) == 0
    data = out / "data"
    assert len(read_series(data / "a.csv")["a"]) == 2000
    assert len(read_series(data / "b.csv")["b"]) == 200
    assert len(read_series(data / "truth.csv")["s"]) == 2000
    first = {p.name: p.read_bytes() for p in data.iterdir()}
    assert run("simulate", "--config", config(), "--out", out) == 0
    assert first == {p.name: p.read_bytes() for p in data.iterdir()}
    assert [p.name for p in out.iterdir()] == ["data"]  # no staging leftovers


@pytest.mark.parametrize("method", ["one", "both"])
def test_correct_writes_every_artifact(tmp_path, config, method):
    out = tmp_path / "run"
    cfg = config(scenario={"noise_sd_a": 0.0, "noise_sd_b": 0.0})
    assert run("simulate", "--config", cfg, "--out", out) == 0
    assert run("correct", "--config", cfg, "--out", out, "--method", method, "--svg") == 0
    d = out / "correct"
    for name in (
        "a_corrected.csv", "b_corrected.csv", "common_corrected.csv", "degradation.json",
        "history.json", "plot_signals.csv", "plot_ratio.csv", "plot_history.csv",
        "ratio.svg", "history.svg",
    ):
        assert (d / name).is_file(), name
    hist = json.loads((d / "history.json").read_text())
    assert hist["converged"] and hist["method"] == method
    assert hist["config"]["correction"]["method"] == method


def test_corrupt_input_names_the_row(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert run("simulate", "--config", config(), "--out", out) == 0
    a = out / "data" / "a.csv"
    lines = a.read_text().splitlines()
    lines[5] = "12.0,not-a-number,a"
    a.write_text("\n".join(lines) + "\n")
    assert run("correct", "--config", config(), "--out", out) == 3
    assert "a.csv:6" in capsys.readouterr().err
    assert not (out / "correct").exists()


def test_fuse_sweep_and_exact_mode(tmp_path, config):
    out = tmp_path / "run"
    cfg = config()
    assert run("simulate", "--config", cfg, "--out", out) == 0
    assert run("correct", "--config", cfg, "--out", out) == 0
    assert run("fuse", "--config", cfg, "--out", out, "--m", "10,20,30") == 0
    assert sorted(p.name for p in (out / "fuse").iterdir()) == ["m10", "m20", "m30"]
    table = np.loadtxt(out / "fuse" / "m20" / "prediction.csv", delimiter=",", skiprows=1)
    assert table.shape[1] == 5 and np.all(table[:, 2] >= 0)
    # small inputs in exact mode: one result set
    ex = config(scenario={"n": 300}, fit={"m": 20}, fusion={"mode": "exact", "options": {"max_iter": 20}})
    out2 = tmp_path / "exact"
    assert run("pipeline", "--config", ex, "--out", out2) == 0
    assert [p.name for p in (out2 / "fuse").iterdir()] == ["exact"]


def test_fuse_without_corrected_inputs(tmp_path, config, capsys):
    assert run("fuse", "--config", config(), "--out", tmp_path / "empty") == 3
    err = capsys.readouterr().err
    assert "run `correct` first" in err


def test_report_without_truth_and_repeatability(tmp_path, config):
    out = tmp_path / "run"
    cfg = config()
    assert run("simulate", "--config", cfg, "--out", out) == 0
    # external inputs without a truth file: internal diagnostics only
    ext = config(inputs={"a": str(out / "data" / "a.csv"), "b": str(out / "data" / "b.csv")})
    ext_out = tmp_path / "ext"
    assert run("correct", "--config", ext, "--out", ext_out) == 0
    assert run("report", "--config", ext, "--out", ext_out) == 0
    metrics = json.loads((ext_out / "report" / "metrics.json").read_text())
    assert metrics["converged"] and "rmse_a_full" not in metrics
    first = (ext_out / "report" / "metrics.json").read_bytes()
    assert run("report", "--config", ext, "--out", ext_out) == 0
    assert (ext_out / "report" / "metrics.json").read_bytes() == first


def test_pipeline_reports_truth_metrics(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert run("pipeline", "--config", config(), "--out", out) == 0
    metrics = json.loads((out / "report" / "metrics.json").read_text())
    for key in ("rmse_a_full", "degradation_sup_error", "rmse_posterior_full_m20"):
        assert key in metrics
    assert metrics["rmse_posterior_full_m20"] < 0.05
    assert "rmse_a_full" in capsys.readouterr().out


def test_explicit_truth_file(tmp_path, config):
    out = tmp_path / "run"
    assert run("simulate", "--config", config(), "--out", out) == 0
    data = out / "data"
    cfg = config(inputs={k: str(data / f"{k}.csv") for k in ("a", "b", "truth")})
    assert run("pipeline", "--config", cfg, "--out", tmp_path / "ext") == 0
    metrics = json.loads((tmp_path / "ext" / "report" / "metrics.json").read_text())
    assert "rmse_posterior_full_m20" in metrics and "rmse_a_full" in metrics


@pytest.mark.parametrize(
    "doc, code",
    [
        ({"bogus": 1}, 2),
        ({"correction": {"epsilon": -1}}, 2),
        ({"fusion": {"m": [0]}}, 2),
        ({"inputs": {"a": "/nonexistent/a.csv", "b": "/nonexistent/b.csv"}}, 3),
    ],
)
def test_exit_codes(tmp_path, doc, code):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert run("correct", "--config", p, "--out", tmp_path / "o") == code


def test_numerical_failure_exit_code(tmp_path, config, monkeypatch, capsys):
    import degfusion.cli as cli
    from degfusion.errors import FitError

    def failing(*args, **kwargs):
        raise FitError("curve fit did not converge")

    out = tmp_path / "run"
    cfg = config()
    assert run("simulate", "--config", cfg, "--out", out) == 0
    monkeypatch.setattr(cli, "correct", failing)
    assert run("correct", "--config", cfg, "--out", out) == 4
    assert "did not converge" in capsys.readouterr().err


def test_missing_config_and_bad_m(tmp_path, capsys):
    assert run("simulate", "--config", tmp_path / "none.json") == 2
    with pytest.raises(SystemExit) as exc:
        run("fuse", "--m", "1,x")
    assert exc.value.code == 2


def test_parallel_sweep_matches_serial(tmp_path, config):
    cfg = config()
    results = {}
    for jobs in (1, 2):
        out = tmp_path / f"j{jobs}"
        assert run("simulate", "--config", cfg, "--out", out) == 0
        assert run("correct", "--config", cfg, "--out", out) == 0
        assert run("fuse", "--config", cfg, "--out", out, "--m", "10,20", "--jobs", jobs) == 0
        results[jobs] = [(out / "fuse" / m / "prediction.csv").read_bytes() for m in ("m10", "m20")]
    assert results[1] == results[2]

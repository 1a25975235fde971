from pathlib import Path

import pytest
import yaml

from hopflab import cli
from hopflab.runner import (ASSERTION_FAILED, CONFIG_ERROR, ENV_OUT, NUMERICAL_FAILURE, OK, ConfigError,
                            Report, emit_summary, execute, load_config, parse_config, run)

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"

GPRIME = {
    "kind": "gprime-check", "name": "slope",
    "model": {"kind": "gbm", "sigma": 0.2},
    "payoff": {"kind": "call", "strike": 1.0, "slope": 2.0},
    "grid": {"xmax": 8.0, "m": 101, "p": 2.0},
    "time": {"T": 1.0, "steps": 50},
    "times": [0.5, 1.0],
    "tolerances": {"abs": 1e-3},
}


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.mark.parametrize("data", [
    [1, 2],
    {"kind": "nope"},
    {"kind": "delta", "model": {"kind": "cev", "sigma": 2.0, "beta": 1.0}},
    {**GPRIME, "tolerances": {"abs": -1.0}},
    {**GPRIME, "seed": -3},
    {**GPRIME, "model": {"kind": "cev", "sigma": -1.0, "beta": 1.0}},
    {**GPRIME, "payoff": {"kind": "digital"}},
    {**GPRIME, "grid": [1, 2]},
])
def test_invalid_configs_write_nothing(tmp_path, data):
    with pytest.raises(ConfigError):
        parse_config(data)
    out = tmp_path / "out"
    assert run(_write(tmp_path, data), out).status == CONFIG_ERROR
    assert not out.exists()


def test_unreadable_and_malformed_files(tmp_path):
    assert run(tmp_path / "missing.yaml", tmp_path / "o").status == CONFIG_ERROR
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_run_writes_byte_stable_files(tmp_path):
    path = _write(tmp_path, GPRIME)
    first = run(path, tmp_path / "a")
    second = run(path, tmp_path / "b")
    assert first.status == OK and second.status == OK
    for p, q in zip(first.paths, second.paths):
        assert p.read_bytes() == q.read_bytes()
        assert p.read_text().startswith("# hopflab 0.1.0 kind=gprime-check seed=0 config_sha256=")


def test_runtime_check_shown_but_not_written(tmp_path):
    data = {**GPRIME, "tolerances": {"abs": 1e-3, "max_seconds": 600}}
    res = execute(parse_config(data), tmp_path)
    assert res.report.checks[-1].name == "runtime"
    text = res.paths[1].read_text().splitlines()
    assert text[-1].startswith("runtime,true,,")


def test_assertion_failure_status(tmp_path):
    res = execute(parse_config({**GPRIME, "tolerances": {"abs": 1e-30}}), tmp_path)
    assert res.status == ASSERTION_FAILED
    assert res.report.failures() and res.paths[1].exists()


def test_numerical_failure_status(tmp_path):
    data = {"kind": "delta", "name": "coarse", "model": {"kind": "cev", "sigma": 2.0, "beta": 1.0},
            "payoff": {"kind": "call", "strike": 1.0}, "grid": {"xmax": 20.0, "m": 5, "p": 1.0},
            "time": {"T": 1.0, "steps": 10}}
    res = execute(parse_config(data), tmp_path / "o")
    assert res.status == NUMERICAL_FAILURE
    assert not (tmp_path / "o").exists()


def test_summary_rows(tmp_path):
    ok = Report("good", "price", ["x"])
    ok.check("fine", True, 1.0, "<= 2")
    bad = Report("bad", "delta", ["x"])
    bad.check("err", False, 3.0, "<= 2")
    text = emit_summary([ok, bad])
    lines = text.splitlines()
    assert lines[0] == "experiment,kind,status,checks,failures"
    assert lines[1].startswith("good,price,PASS,1,")
    assert lines[2].startswith("bad,delta,FAIL,1,err=3.0")


def test_summary_of_directory(tmp_path):
    assert emit_summary(tmp_path).splitlines() == ["experiment,kind,status,checks,failures"]
    run(_write(tmp_path, GPRIME), tmp_path / "out")
    out = tmp_path / "index.csv"
    text = emit_summary(tmp_path / "out", out)
    assert out.read_text() == text
    assert text.splitlines()[1].startswith("slope,gprime-check,PASS,")


def test_cli_oracle(capsys):
    assert cli.main(["oracle", "norm_cdf", "z=0"]) == 0
    assert capsys.readouterr().out.strip() == "0.5"
    assert cli.main(["oracle", "bs_call_price", "x=1", "t=1", "sigma=0.2", "K=1"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.0796557, abs=1e-7)
    assert cli.main(["oracle", "norm_cdf", "z"]) == CONFIG_ERROR
    assert cli.main(["oracle", "norm_cdf", "z=abc"]) == CONFIG_ERROR
    assert cli.main(["oracle", "norm_cdf"]) == CONFIG_ERROR


def test_cli_run_uses_environment_directory(tmp_path, monkeypatch, capsys):
    path = _write(tmp_path, GPRIME)
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert cli.main(["run", str(path)]) == OK
    assert (tmp_path / "env" / "slope.csv").exists()
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["run", str(path), "--out", str(tmp_path / "flag")]) == OK
    assert (tmp_path / "flag" / "slope.checks.csv").exists()
    assert cli.main(["summary", str(tmp_path / "flag")]) == OK
    assert "slope,gprime-check,PASS" in capsys.readouterr().out
    assert cli.main(["summary", str(tmp_path / "nowhere")]) == CONFIG_ERROR


def test_cli_shortcuts(tmp_path, capsys):
    out = str(tmp_path)
    assert cli.main(["delta", "--model", "gbm", "--sigma", "0.2", "--xmax", "8", "--m", "201",
                     "--steps", "50", "--out", out]) == OK
    assert cli.main(["barrier", "--beta", "1", "--out", out]) == OK
    assert cli.main(["barrier", "--beta", "1.5", "--epsilon", "0.4", "--N", "2", "--out", out]) == ASSERTION_FAILED
    assert cli.main(["mc", "--model", "gbm", "--sigma", "0.2", "--paths", "20000", "--out", out]) == OK
    assert cli.main(["barrier", "--beta", "2.5", "--out", out]) == CONFIG_ERROR
    assert (tmp_path / "delta.csv").exists() and (tmp_path / "mc.csv").exists()


@pytest.mark.parametrize("n", range(1, 11))
def test_one_config_per_criterion(n):
    files = sorted(EXPERIMENTS.glob(f"{n:02d}_*.yaml"))
    assert len(files) == 1
    assert load_config(files[0]).kind

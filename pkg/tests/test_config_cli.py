import json

import numpy as np
import pytest

from mildhjb.cli import run_cli
from mildhjb.config import build_objects, load_config, parse_config
from mildhjb.errors import ConfigError

SMALL = """seed = 0
[model]
kind = "heat"
n_modes = 1
n_proj = 1
[cost]
kind = "cosine"
weights = [1.0]
[hamiltonian]
control_kind = "ball"
radius = 1.0
l1_coeff = 0.5
[solver]
lambda = 3.0
n_grid = 201
[simulate]
x0 = [[0.0]]
n_paths = 200
policies = ["feedback", "zero", [0.5]]
[verify]
checks = ["linear_identity", "concavity"]
linear_tol = 1e-3
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def _run(tmp_path, *argv):
    return run_cli(list(argv) + ["--out-prefix", str(tmp_path / "out" / "run")])


def test_shipped_configs_parse(heat_config):
    for name in ("heat.toml", "wave.toml"):
        cfg = load_config(heat_config.parent / name)
        model, cost, spec, solver = build_objects(cfg)
        assert model.n_proj == cost.dim
        assert spec.d_control == model.d_control


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        parse_config({"model": {"kind": "heat", "n_mode": 1}})
    with pytest.raises(ConfigError):
        parse_config({"model": {"kind": "heat"}, "solvr": {}})
    with pytest.raises(ConfigError):
        parse_config({"cost": {}})
    with pytest.raises(ConfigError):
        parse_config({"model": {"kind": "heat"}, "seed": -1})
    with pytest.raises(ConfigError):
        parse_config({"model": {"kind": "heat"}, "solver": {"lambda": -1.0}})


def test_overrides_change_digest(small):
    cfg = load_config(small)
    other = cfg.with_overrides(seed=4, tau_pic=1e-6)
    assert other.seed == 4 and other.solver["tau_pic"] == 1e-6
    assert other.digest != cfg.digest


def test_solve_writes_csv_and_summary(tmp_path, small, capsys):
    assert _run(tmp_path, "solve", "--config", str(small), "--plot") == 0
    out = tmp_path / "out"
    data = np.loadtxt(out / "run_value.csv", delimiter=",", skiprows=1)
    assert data.shape == (201, 3)
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["lambda"] == 3.0 and summary["residual"] <= 1e-5
    assert (out / "run_value.png").stat().st_size > 0
    assert (out / "run_convergence.png").stat().st_size > 0
    assert "iterations=" in capsys.readouterr().out


def test_continue_command(tmp_path, small):
    assert _run(tmp_path, "continue", "--config", str(small), "--lambda", "1.0") == 0
    summary = json.loads((tmp_path / "out" / "run_summary.json").read_text())
    assert summary["nu"] > summary["lambda"] == 1.0


def test_missing_config_exits_3(tmp_path):
    assert _run(tmp_path, "solve", "--config", str(tmp_path / "nope.toml")) == 3


def test_degenerate_wave_noise_exits_3(tmp_path, heat_config):
    text = (heat_config.parent / "wave.toml").read_text().replace("sigma = 1.0", "sigma = 0.0")
    path = tmp_path / "flat.toml"
    path.write_text(text)
    assert _run(tmp_path, "solve", "--config", str(path)) == 3


def test_nonconvergence_exits_2(tmp_path, small):
    assert _run(tmp_path, "solve", "--config", str(small), "--max-iter", "1", "--tol", "1e-14") == 2


def test_verify_pass_and_fail(tmp_path, small):
    assert _run(tmp_path, "verify", "--config", str(small)) == 0
    reports = json.loads((tmp_path / "out" / "run_verify.json").read_text())["reports"]
    assert {r["name"] for r in reports} == {"linear_resolvent_identity", "hamiltonian_concavity"}
    strict = tmp_path / "strict.toml"
    strict.write_text(SMALL.replace("linear_tol = 1e-3", "linear_tol = 1e-14"))
    assert _run(tmp_path, "verify", "--config", str(strict)) == 1


def test_simulate_command(tmp_path, small):
    assert _run(tmp_path, "simulate", "--config", str(small)) == 0
    rows = json.loads((tmp_path / "out" / "run_simulate.json").read_text())["estimates"]
    assert [r["policy"]["kind"] for r in rows] == ["feedback", "zero", "constant"]
    assert all(r["value"] is not None for r in rows)


def test_smoothing_command(tmp_path, small):
    assert _run(tmp_path, "smoothing", "--config", str(small), "--plot") == 0
    fit = json.loads((tmp_path / "out" / "run_smoothing_fit.json").read_text())
    assert 0 <= fit["gamma"] < 1
    assert (tmp_path / "out" / "run_smoothing.png").exists()


def test_outputs_are_deterministic(tmp_path, small):
    blobs = []
    for k in range(2):
        prefix = tmp_path / f"r{k}" / "run"
        assert run_cli(["solve", "--config", str(small), "--plot", "--out-prefix", str(prefix)]) == 0
        blobs.append([(prefix.parent / f"run{s}").read_bytes()
                      for s in ("_value.csv", "_summary.json", "_value.png", "_convergence.png")])
    assert blobs[0] == blobs[1]

import csv
import json

import numpy as np
import pytest

from impulsive_control import evolve, make_rotation_example
from impulsive_control.cli import main
from impulsive_control.config import Tabulated, load_config
from impulsive_control.csvio import read_trajectory
from impulsive_control.exceptions import ConfigError


def write_cfg(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


ROTATION = {"model": {"preset": "rotation-example"}, "synthesis": {"target": [0.0, 0.0]}}


@pytest.mark.parametrize("command,expected", [
    ("simulate", ["trajectory.csv", "trajectory.png"]),
    ("gramian", ["gramian_W.csv", "gramian_Gamma.csv", "gramian_Theta_tilde.csv",
                 "gramian_eigenvalues.csv", "a0_diagnostic.csv", "gramian_eigenvalues.png"]),
    ("synthesize", ["control_u.csv", "control_v.csv", "phi.csv", "closed_loop.csv",
                    "synthesis_summary.csv", "control_u.png", "closed_loop.png"]),
    ("verify", ["verify.csv"]),
    ("sweep", ["sweep.csv", "sweep.png"]),
    ("figures", [f"rotation_{c}_{i}.{ext}" for c in ("u", "u0") for i in ("impulsive", "smooth")
                 for ext in ("csv", "png")]),
])
def test_every_subcommand_runs(tmp_path, command, expected):
    cfg = write_cfg(tmp_path, {**ROTATION, "synthesis": {**ROTATION["synthesis"], "alphas": [1e-1, 1e-3]}})
    out = tmp_path / "out"
    assert main([command, "--config", str(cfg), "--output", str(out)]) == 0
    for name in expected:
        assert (out / name).is_file(), name


def test_outputs_are_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, {**ROTATION, "synthesis": {"target": [0.0, 0.0], "alphas": [1e-2, 1e-4]}})
    for run in ("a", "b"):
        assert main(["sweep", "--config", str(cfg), "--output", str(tmp_path / run)]) == 0
        assert main(["synthesize", "--config", str(cfg), "--output", str(tmp_path / run)]) == 0
    for name in ("sweep.csv", "sweep.png", "closed_loop.csv", "control_u.csv", "closed_loop.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_model_flag_without_config(tmp_path):
    assert main(["gramian", "--model", "heat-neumann", "--output", str(tmp_path), "--no-plots"]) == 0
    assert not list(tmp_path.glob("*.png"))


def test_missing_config_exit_code(tmp_path):
    assert main(["simulate", "--output", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 2


def test_unknown_keys_rejected(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"preset": "rotation-example", "colour": "red"}})
    assert main(["simulate", "--config", str(cfg)]) == 2
    with pytest.raises(ConfigError):
        load_config(cfg)


@pytest.mark.parametrize("data", [
    {"model": {}},
    {"model": {"preset": "rotation-example"}, "synthesis": {"damping": 0.01}},
    {"model": {"preset": "rotation-example"}, "synthesis": {"target": [1.0, 2.0, 3.0]}},
    {"model": {"preset": "heat-dirichlet", "N": 1}},
])
def test_invalid_configs_exit_2(tmp_path, data):
    cfg = write_cfg(tmp_path, data)
    assert main(["synthesize", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 2


def test_yaml_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("model:\n  preset: heat-dirichlet\n  N: 3\noutput:\n  plots: false\n")
    assert main(["simulate", "--config", str(path), "--output", str(tmp_path / "o")]) == 0


def test_nonconvergence_exit_4_writes_history(tmp_path):
    cfg = write_cfg(tmp_path, {**ROTATION, "synthesis": {"target": [0, 0], "max_outer": 1, "outer_tol": 1e-15}})
    out = tmp_path / "o"
    assert main(["synthesize", "--config", str(cfg), "--output", str(out)]) == 4
    rows = read_rows(out / "iterate_history.csv")
    assert len(rows) == 1 and float(rows[0]["gap"]) > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path, {
        "model": {"custom": {"kind": "dense-generator", "generator": [[800.0]], "input_map": [[1.0]],
                             "x0": [1.0], "horizon": 1.0}},
        "output": {"plots": False},
    })
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 3


def test_simulate_zero_controls_is_free_flow(tmp_path):
    cfg = write_cfg(tmp_path, {
        "model": {"preset": "rotation-example", "impulses": []},
        "nonlinearity": {"kind": "none"},
        "output": {"plots": False},
    })
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
    t, _, X = read_trajectory(out / "trajectory.csv")
    model = make_rotation_example().model
    for ti, xi in zip(t, X):
        np.testing.assert_allclose(xi, evolve(model, ti, [1.0, 0.0]), atol=1e-13)


def test_simulate_with_oracle(tmp_path):
    cfg = write_cfg(tmp_path, {**ROTATION, "control": {"u": [1.0, 0.0], "v": [[1.0]]},
                               "simulate": {"oracle": True}, "output": {"plots": False}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
    assert float(read_rows(out / "oracle_distance.csv")[0]["sup_distance"]) < 1e-6


def test_trajectory_csv_round_trip_as_table(tmp_path):
    cfg = write_cfg(tmp_path, {**ROTATION, "control": {"u": [1.0, 0.0], "v": [[1.0]]},
                               "output": {"plots": False}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
    t, sides, X = read_trajectory(out / "trajectory.csv")
    assert sides.count("left") == 1 and sides.count("right") == 1
    tab = Tabulated(t, X)
    for ti, xi, side in zip(t, X, sides):
        if side != "right":
            np.testing.assert_array_equal(tab(ti), xi)
    # reuse the file as a tabulated forcing
    cfg2 = write_cfg(tmp_path, {"model": {"preset": "rotation-example"},
                                "nonlinearity": {"kind": "tabulated", "table": {"csv": "o/trajectory.csv"}},
                                "synthesis": {"target": [0, 0], "alphas": [1e-2]},
                                "output": {"plots": False}}, "run2.json")
    assert main(["verify", "--config", str(cfg2), "--output", str(tmp_path / "v")]) == 0
    assert float(read_rows(tmp_path / "v" / "verify.csv")[0]["relative_residual"]) < 1e-8


def test_sweep_measured_matches_predicted(tmp_path):
    cfg = write_cfg(tmp_path, {
        "model": {"custom": {"kind": "dense-generator", "generator": [[0.0]], "input_map": [[1.0]],
                             "x0": [0.0], "horizon": 1.0}},
        "synthesis": {"target": [1.0]},
        "output": {"plots": False},
    })
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(cfg), "--output", str(out)]) == 0
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 9
    for r in rows:
        a = float(r["alpha"])
        assert abs(float(r["measured_error"]) - a / (a + 1)) < 1e-10
        assert abs(float(r["measured_error"]) - float(r["predicted_error"])) < 1e-12
        assert r["status"] == "ok"


def test_alpha_flag_and_literal_variant(tmp_path):
    cfg = write_cfg(tmp_path, {**ROTATION, "nonlinearity": {"kind": "none"}, "output": {"plots": False}})
    out = tmp_path / "o"
    assert main(["verify", "--config", str(cfg), "--output", str(out), "--alpha", "0.01",
                 "--paper-literal-control"]) == 0
    rows = read_rows(out / "verify.csv")
    assert len(rows) == 1 and rows[0]["variant"] == "paper-literal"
    assert main(["verify", "--config", str(cfg), "--output", str(out), "--alpha", "-1"]) == 2


def test_neutral_sweep_and_parallel_jobs(tmp_path):
    data = {
        "model": {"preset": "heat-neumann", "N": 4},
        "nonlinearity": {"kind": "bounded-sin", "coefficient": 0.05},
        "neutral": {"sigma": "bounded-demo", "coefficient": 0.05, "delay": 0.25},
        "synthesis": {"target": [1.0, 0.5, 0.0, 0.0], "alphas": [1e-1, 1e-3]},
        "output": {"plots": False},
    }
    cfg = write_cfg(tmp_path, data)
    assert main(["sweep", "--config", str(cfg), "--output", str(tmp_path / "a")]) == 0
    assert main(["sweep", "--config", str(cfg), "--output", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "s"),
                 "--neutral-convention", "standard"]) == 0


@pytest.mark.parametrize("name", ["rotation.yaml", "heat_dirichlet.yaml", "neutral_heat.yaml"])
def test_shipped_configs_validate(name):
    from pathlib import Path

    from impulsive_control.config import build_system

    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert build_system(cfg).dim >= 2

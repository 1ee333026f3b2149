"""Config validation, experiment runs, audits, and exit codes."""

import json

import numpy as np
import pytest

from dpbilevel.cli import (
    ExperimentConfig,
    _cells,
    _flatten_ledger,
    main,
    run_audits,
    run_experiment,
)
from dpbilevel.errors import ConfigurationError

ALL_ONES = {k: 1.0 for k in (
    "L_fx", "L_fy", "mu_g", "L_gy", "beta_fyy", "beta_fxx", "beta_fxy",
    "beta_gxy", "beta_gyy", "M_gxy", "M_gyy", "C_gxy", "C_gyy", "D_x", "D_y",
)}


def config_dict(out_dir, **overrides):
    raw = {
        "instance": {"name": "hard", "params": {"d": 1}},
        "mechanism": {"name": "exponential_mechanism", "params": {"xi": 0.5}},
        "budget": {"epsilon": 1.0, "delta": 0.0},
        "sweep": {"n": [8, 16]},
        "trials_per_cell": 2,
        "seed": 7,
        "output_dir": str(out_dir),
    }
    raw.update(overrides)
    return raw


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_dict(config_dict(tmp_path))
    assert cfg.instance_name == "hard"
    assert cfg.mechanism_name == "exponential_mechanism"
    assert cfg.epsilon == 1.0 and cfg.delta == 0.0
    assert cfg.sweep == {"n": [8, 16]}


@pytest.mark.parametrize("mutate", [
    {"unknown_top": 1},
    {"mechanism": {"name": "median_of_means"}},
    {"mechanism": {"name": "warm_start", "extra": 1}},
    {"budget": {"epsilon": 1.0, "rho": 0.1}},
    {"sweep": {"learning_rate": [0.1]}},
    {"sweep": {"n": []}},
    {"trials_per_cell": 0},
    {"instance": "hard"},
])
def test_config_rejections(tmp_path, mutate):
    raw = config_dict(tmp_path)
    raw.update(mutate)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(raw)


def test_config_missing_sections(tmp_path):
    raw = config_dict(tmp_path)
    del raw["budget"]
    with pytest.raises(ConfigurationError, match="missing"):
        ExperimentConfig.from_dict(raw)


def test_cells_enumerate_in_canonical_order(tmp_path):
    raw = config_dict(tmp_path, sweep={"epsilon": [0.5, 1.0], "n": [4]})
    cells = _cells(ExperimentConfig.from_dict(raw))
    # n before epsilon regardless of dict insertion order
    assert cells == [{"n": 4, "epsilon": 0.5}, {"n": 4, "epsilon": 1.0}]


def test_flatten_ledger_dots_and_json():
    flat = _flatten_ledger({"a": {"b": 1, "c": {"d": 2}}, "e": [1, 2],
                            "f": 3.5})
    assert flat == {"mech.a.b": 1, "mech.a.c.d": 2,
                    "mech.e": "[1, 2]", "mech.f": 3.5}


# ---------------------------------------------------------------------------
# experiment runs
# ---------------------------------------------------------------------------

def test_run_is_deterministic(tmp_path):
    first = ExperimentConfig.from_dict(config_dict(tmp_path / "a"))
    second = ExperimentConfig.from_dict(config_dict(tmp_path / "b"))
    run_experiment(first)
    run_experiment(second)
    assert ((tmp_path / "a" / "results.csv").read_text()
            == (tmp_path / "b" / "results.csv").read_text())


def test_run_rows_and_summary(tmp_path):
    cfg = ExperimentConfig.from_dict(config_dict(tmp_path))
    outcome = run_experiment(cfg)
    results = (tmp_path / "results.csv").read_text().splitlines()
    header = results[0].split(",")
    assert header[:10] == ["cell", "trial", "seed", "n", "d", "epsilon",
                           "delta", "excess_risk", "grad_norm", "error"]
    assert len(results) == 1 + 4  # two cells x two trials
    # closed-form optimum available: excess risk is populated and clean
    for line in results[1:]:
        row = dict(zip(header, line.split(",")))
        assert row["error"] == ""
        assert float(row["excess_risk"]) >= -1e-12

    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 2
    assert outcome["cells"] == 2 and outcome["trials"] == 4
    assert outcome["errors"] == 0


def test_parallel_run_matches_serial(tmp_path):
    raw_a = config_dict(tmp_path / "serial")
    raw_b = config_dict(tmp_path / "parallel")
    run_experiment(ExperimentConfig.from_dict(raw_a))
    run_experiment(ExperimentConfig.from_dict(raw_b), workers=2,
                   config_raw=raw_b)
    assert ((tmp_path / "serial" / "results.csv").read_text()
            == (tmp_path / "parallel" / "results.csv").read_text())


def test_failing_trials_are_rows_not_crashes(tmp_path):
    # the regularized mechanism demands delta > 0: every trial fails, and
    # the failure lands in the error column
    raw = config_dict(
        tmp_path,
        mechanism={"name": "regularized_exp_mechanism", "params": {}},
        budget={"epsilon": 1.0, "delta": 0.0},
        sweep={"n": [8]}, trials_per_cell=1)
    outcome = run_experiment(ExperimentConfig.from_dict(raw))
    assert outcome["errors"] == 1
    lines = (tmp_path / "results.csv").read_text().splitlines()
    header = lines[0].split(",")
    row = dict(zip(header, lines[1].split(",")))
    assert "delta" in row["error"]
    assert row["excess_risk"] == ""


# ---------------------------------------------------------------------------
# the audit battery
# ---------------------------------------------------------------------------

def test_audit_battery_passes_with_failing_controls(tmp_path):
    cfg = ExperimentConfig.from_dict(config_dict(
        tmp_path, sweep={"n": [12]}, trials_per_cell=1))
    outcome = run_audits(cfg)
    assert outcome["failed"] is False
    assert len(outcome["audits"]) >= 4
    for report in outcome["audits"]:
        assert report["passed"], report
    assert len(outcome["negative_controls"]) >= 2
    for control in outcome["negative_controls"]:
        assert control["passed"] is False, control


# ---------------------------------------------------------------------------
# command-line entry
# ---------------------------------------------------------------------------

def write_config(tmp_path, raw):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_main_run_exit_zero(tmp_path, capsys):
    raw = config_dict(tmp_path / "out", sweep={"n": [8]}, trials_per_cell=1)
    code = main(["run", write_config(tmp_path, raw)])
    assert code == 0
    assert (tmp_path / "out" / "results.csv").exists()
    assert json.loads(capsys.readouterr().out)["trials"] == 1


def test_main_seed_and_out_overrides(tmp_path):
    raw = config_dict(tmp_path / "ignored", sweep={"n": [8]},
                      trials_per_cell=1)
    other = tmp_path / "elsewhere"
    code = main(["run", write_config(tmp_path, raw),
                 "--seed", "99", "--out", str(other)])
    assert code == 0
    assert (other / "results.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_main_missing_config_is_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 1
    assert "config error" in capsys.readouterr().err


def test_main_bad_json_is_config_error(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 1


def test_main_unknown_mechanism_is_config_error(tmp_path):
    raw = config_dict(tmp_path, mechanism={"name": "laplace"})
    assert main(["run", write_config(tmp_path, raw)]) == 1


def test_main_audit_prints_verdicts(tmp_path, capsys):
    raw = config_dict(tmp_path / "out", sweep={"n": [12]}, trials_per_cell=1)
    code = main(["audit", write_config(tmp_path, raw)])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out and "FAIL (expected)" in out
    assert (tmp_path / "out" / "audits.json").exists()


def test_main_constants_frozen_values(tmp_path, capsys):
    path = tmp_path / "constants.json"
    path.write_text(json.dumps(dict(ALL_ONES, n=10)))
    assert main(["constants", str(path)]) == 0
    derived = json.loads(capsys.readouterr().out)
    assert derived["s"] == pytest.approx(4.4)
    assert derived["K"] == pytest.approx(18.0)
    assert derived["beta_phi"] == pytest.approx(8.0)
    assert derived["G"] == pytest.approx(3.0)
    assert derived["Psi"] == pytest.approx(3.0)

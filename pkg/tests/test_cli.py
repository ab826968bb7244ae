import csv
import json

import jsonschema
import pytest

from selfassembly.cli import (
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    main,
    run_design,
    run_sweep,
    run_validate,
)
from selfassembly.config import REPORT_SCHEMA, ConfigError, RunConfig

FAST = {"restarts": 2, "samples": 4000, "final_samples": 20000, "maxfev": 400}


def small_dict(**over):
    d = {
        "geometry": {"N": 6, "d0": 0.5, "gaps": [3, 3], "n": 2},
        "pattern": "010010",
        "sigma": 0.3,
        "optimizer": dict(FAST),
        "seed": 3,
        "sequence": [[1]],
        "trials": 200,
        "dt": 1e-3,
    }
    d.update(over)
    return d


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cfg_file(workdir):
    path = workdir / "cfg.json"
    path.write_text(json.dumps(small_dict()))
    return path


@pytest.fixture(scope="module")
def design_report(workdir, cfg_file):
    out = workdir / "design.json"
    assert main(["design", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    return out


def test_config_round_trip():
    cfg = RunConfig.from_dict(small_dict())
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert RunConfig.from_json(cfg.to_json()).digest() == cfg.digest()
    assert len(cfg.digest()) == 64


@pytest.mark.parametrize(
    "change, field",
    [
        ({"pattern": "01001"}, "pattern"),
        ({"pattern": "011010"}, "pattern"),
        ({"pattern": "01x010"}, "pattern"),
        ({"sigma": -1.0}, "sigma"),
        ({"trials": 0}, "trials"),
        ({"sequence": [[1], [1]]}, "sequence"),
        ({"optimizer": {"restarts": 0}}, "optimizer.restarts"),
        ({"optimizer": {"colour": 1}}, "optimizer"),
        ({"geometry": {"N": 6, "d0": 0.5, "gaps": [3, 2], "n": 2}}, "geometry.gaps"),
        ({"n_min": 4}, "n_min"),
    ],
)
def test_config_field_errors(change, field):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(small_dict(**change))
    assert info.value.field == field


def test_bad_json_reports_position():
    with pytest.raises(ConfigError, match="line 2"):
        RunConfig.from_json('{\n  "pattern": ,\n}')


def test_design_report(design_report):
    rep = json.loads(design_report.read_text())
    jsonschema.validate(rep, REPORT_SCHEMA)
    assert len(rep["schedule"]["stages"]) == 1
    assert rep["p_total"] == pytest.approx(rep["schedule"]["p_total"])
    assert rep["config_hash"] == RunConfig.from_dict(rep["config"]).digest()
    assert rep["epsilon"]["achieved"] == pytest.approx(1 - rep["p_total"])
    assert set(rep["seeds"]) == {"seed", "design"}


def test_design_reproduces_from_report(design_report):
    rep = json.loads(design_report.read_text())
    again = run_design(RunConfig.from_dict(rep["config"])).to_dict()
    for a, b in zip(again["schedule"]["stages"], rep["schedule"]["stages"]):
        assert a["u"] == b["u"]
    assert again["schedule"]["static"]["u"] == rep["schedule"]["static"]["u"]


def test_validate_both_models(workdir, cfg_file, design_report):
    out = workdir / "val.json"
    code = main(["validate", "--config", str(cfg_file), "--schedule", str(design_report),
                 "--model", "both", "--out", str(out)])
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    jsonschema.validate(rep, REPORT_SCHEMA)
    v = rep["validation"]
    assert set(v) == {"continuous", "discrete"}
    assert rep["validation_gap"] == pytest.approx(abs(v["continuous"]["value"] - v["discrete"]["value"]))


def test_validate_rejects_few_trials(cfg_file, design_report):
    cfg = RunConfig.load(cfg_file)
    with pytest.raises(ConfigError):
        run_validate(cfg, design_report, trials=0)
    assert main(["validate", "--config", str(cfg_file), "--schedule", str(design_report), "--trials", "0"]) == EXIT_CONFIG


def test_validate_rejects_foreign_schedule(workdir, design_report):
    other = workdir / "other.json"
    other.write_text(json.dumps(small_dict(pattern="001010")))
    assert main(["validate", "--config", str(other), "--schedule", str(design_report)]) == EXIT_CONFIG
    junk = workdir / "junk.json"
    junk.write_text("{}")
    assert main(["validate", "--config", str(workdir / "cfg.json"), "--schedule", str(junk)]) == EXIT_CONFIG


@pytest.mark.parametrize("model", ["continuous", "discrete"])
def test_simulate_writes_trajectory(workdir, design_report, model):
    cfg = workdir / f"cfg_{model}.json"
    cfg.write_text(json.dumps(small_dict(model=model)))
    traj = workdir / f"traj_{model}.csv"
    assert main(["simulate", "--config", str(cfg), "--schedule", str(design_report),
                 "--seed", "9", "--traj", str(traj), "--out", str(workdir / "sim.json")]) == EXIT_OK
    with open(traj) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "x2", "stage"]
    assert float(rows[-1][0]) == pytest.approx(json.loads(design_report.read_text())["schedule"]["switch_times"][-1])


def test_exit_codes(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text(json.dumps(small_dict(pattern="0100")))
    assert main(["design", "--config", str(bad), "--out", str(workdir / "x.json")]) == EXIT_CONFIG
    assert "pattern" in capsys.readouterr().err
    assert main(["design", "--config", str(workdir / "missing.json"), "--out", "x"]) == EXIT_CONFIG


def test_numerical_failure_exit_code(monkeypatch, cfg_file):
    def boom(cfg):
        raise FloatingPointError("overflow in energy")

    monkeypatch.setattr("selfassembly.cli.run_design", boom)
    assert main(["design", "--config", str(cfg_file), "--out", "unused.json"]) == EXIT_NUMERIC


def test_empty_sweep(workdir, cfg_file):
    assert run_sweep(RunConfig.load(cfg_file), {"sigma": []}) == []
    sweep = workdir / "empty.json"
    sweep.write_text(json.dumps({"sigma": []}))
    out = workdir / "sweep.json"
    assert main(["sweep", "--config", str(cfg_file), "--sweep", str(sweep), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text()) == []


def test_sigma_sweep_is_monotone(workdir, cfg_file):
    path = workdir / "sweep.csv"
    reports = run_sweep(RunConfig.load(cfg_file), {"sigma": [0.1, 0.2, 0.45]}, path)
    probs = [r.p_total for r in reports]
    assert all(a >= b - 1e-3 for a, b in zip(probs, probs[1:]))
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["sigma"]) for r in rows] == [0.1, 0.2, 0.45]


def test_n_min_sweep_counts_candidates(cfg_file):
    reports = run_sweep(RunConfig.load(cfg_file), {"n_min": [2, 3]})
    assert [len(r.electrode_table) for r in reports] == [3, 1]
    for r in reports:
        r.validate()

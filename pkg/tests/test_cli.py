import json

import pytest

from geosched.cli import main
from geosched.fixtures import simple_scenario
from geosched.scenario import scenario_to_dict


@pytest.fixture
def scen_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(scenario_to_dict(simple_scenario(2, 2, car=[4.0, 6.0], carbon_factor=[0.3, 0.5]))))
    return p


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_validate_ok(scen_file, capsys):
    assert main(["validate", str(scen_file)]) == 0
    assert _json(capsys)["n_tasks"] == 2


def test_validate_bundled_name(capsys):
    assert main(["validate", "four_dc"]) == 0
    assert _json(capsys)["n_dcs"] == 4


def test_validate_rejects(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    assert main(["validate", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_oracle_and_too_large(scen_file, capsys):
    assert main(["oracle", "--scenario", str(scen_file), "--tau", "2", "--res", "0.1"]) == 0
    assert _json(capsys)["solver"] == "oracle"
    assert main(["oracle", "--scenario", "four_dc", "--res", "0.01"]) == 3
    assert "TooLarge" in capsys.readouterr().err


def test_oracle_bad_prior_peak(scen_file):
    assert main(["oracle", "--scenario", str(scen_file), "--prior-peak", "1,2,3"]) == 2


def test_allocate_needs_checkpoint(scen_file):
    assert main(["allocate", "--scenario", str(scen_file), "--solver", "gtdrl"]) == 3


def test_train_allocate_roundtrip(scen_file, tmp_path, capsys):
    out = tmp_path / "agents"
    assert main(["train", "--scenario", str(scen_file), "--episodes", "8", "--out", str(out)]) == 0
    assert _json(capsys)["episodes_trained"] == 8
    code = main(["allocate", "--scenario", str(scen_file), "--solver", "gtdrl", "--checkpoint", str(out)])
    assert code == 0
    assert len(_json(capsys)["rates"]) == 2


def test_run_writes_csvs(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"scenario": "four_dc", "solvers": ["nash"], "runs": 1, "output": "out"}))
    assert main(["run", "--config", str(cfg)]) == 0
    body = _json(capsys)
    assert (tmp_path / "out" / "epochs.csv").exists()
    assert body["output"].endswith("out")


def test_run_bad_config(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"scenario": "four_dc", "runs": 0}))
    assert main(["run", "--config", str(cfg)]) == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2

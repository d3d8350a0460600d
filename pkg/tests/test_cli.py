import json

import pytest

from beamsched import cli
from beamsched.scheduler import SchedulingAbort

SMALL = {"num_beams": 3, "users_per_beam": 3, "window_slots": 4, "qos_slots_range": [0, 3]}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_run_writes_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg_file), "--method", "alg1-relax", "--seed", "1", "--out", str(out)]) == 0
    assert (out / "slot_sum.csv").exists() and (out / "summary.json").exists()
    assert "alg1-relax" in capsys.readouterr().out
    doc = json.loads((out / "summary.json").read_text())
    assert doc["summary"]["slots"] == 4 and doc["summary"]["seed"] == 1


def test_compare_writes_table(cfg_file, tmp_path, capsys):
    out = tmp_path / "cmp"
    code = cli.main(["compare", "--config", str(cfg_file), "--methods", "sus,random", "--seeds", "0-1", "--out", str(out)])
    assert code == 0
    assert (out / "comparison.csv").exists()
    assert "sum_throughput" in capsys.readouterr().out


def test_validate_config(cfg_file, capsys):
    assert cli.main(["validate-config", str(cfg_file)]) == 0
    assert json.loads(capsys.readouterr().out)["num_beams"] == 3


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"window_slots": 0}))
    assert cli.main(["validate-config", str(bad)]) == 2
    assert "window_slots" in capsys.readouterr().err
    assert cli.main(["validate-config", str(tmp_path / "missing.yaml")]) == 2
    garbled = tmp_path / "g.yaml"
    garbled.write_text("a: [1,\n")
    assert cli.main(["run", "--config", str(garbled), "--method", "sus", "--out", str(tmp_path / "o")]) == 2


def test_environment_override(cfg_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BEAMSCHED_WINDOW_SLOTS", "5")
    assert cli.main(["validate-config", str(cfg_file)]) == 0
    assert json.loads(capsys.readouterr().out)["window_slots"] == 5
    monkeypatch.setenv("BEAMSCHED_WINDOW_SLOTS", "two")
    assert cli.main(["validate-config", str(cfg_file)]) == 2


def test_strict_abort_exits_3(cfg_file, tmp_path, monkeypatch, capsys):
    def abort(*args, **kwargs):
        raise SchedulingAbort("slot power allocation infeasible for users [4, 7]")

    monkeypatch.setattr(cli, "run_benchmark", abort)
    code = cli.main(["run", "--config", str(cfg_file), "--method", "alg2-strict", "--out", str(tmp_path / "o")])
    assert code == 3
    assert "infeasible" in capsys.readouterr().err


def test_bad_arguments_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--method", "alg7", "--out", str(tmp_path)])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["compare", "--seeds", "x-y", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_seed_list_parsing():
    assert cli._int_list("0-3,7") == [0, 1, 2, 3, 7]

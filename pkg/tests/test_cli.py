import csv
import json
import subprocess
import sys

import pytest
import yaml

from vfl_tse import economics
from vfl_tse.cli import main


@pytest.fixture
def cfg_file(tmp_path, tiny):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(tiny))
    return str(p)


def test_print_costs(capsys):
    assert main(["print-costs"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["E_p"] == pytest.approx(0.3)
    assert out["H_minus_H_prime"] == pytest.approx(economics.costs().G)
    assert main(["print-costs", "--distance", "100"]) == 0
    assert json.loads(capsys.readouterr().out)["E_t"] < out["E_t"]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("game:\n  gamm0: 0.4\n")
    assert main(["print-costs", "--config", str(bad)]) == 2
    assert "did you mean 'gamma0'" in capsys.readouterr().err
    assert main(["experiment", "--scenario", "fig99"]) == 2
    assert main(["print-costs", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "vfl_tse", "print-costs"], capture_output=True, text=True)
    assert r.returncode == 0 and "H_prime" in r.stdout


def test_experiment_pass_fail_and_check(cfg_file, tmp_path, tiny, capsys):
    out = tmp_path / "bg"
    assert main(["experiment", "--config", cfg_file, "--scenario", "bound_gap", "--out", str(out)]) == 0
    assert main(["experiment", "--config", cfg_file, "--scenario", "bound_gap", "--out", str(out), "--check"]) == 0
    (out / "bound_gap.csv").write_text("tampered\n")
    assert main(["experiment", "--config", cfg_file, "--scenario", "bound_gap", "--out", str(out), "--check"]) == 1
    tiny["game"]["cycles"] = 5
    short = tmp_path / "short.yaml"
    short.write_text(yaml.safe_dump(tiny))
    capsys.readouterr()
    assert main(["experiment", "--config", str(short), "--scenario", "mechanism_compare", "--out", str(tmp_path / "mc")]) == 1
    report = json.loads(capsys.readouterr().err)
    assert "proposed_converges" in report["failures"]


def test_game_command(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["game", "--out", str(out), "--seed", "3"]) == 0
    assert {p.name for p in out.iterdir()} == {"trajectory.csv", "bounds.json", "game_summary.json"}
    assert len(list(csv.reader(open(out / "trajectory.csv")))) == 501
    summary = json.loads((out / "game_summary.json").read_text())
    assert summary["equilibrium"]["gamma"] == 0.75
    assert main(["game", "--out", str(out), "--mode", "closed_form", "--mechanism", "sgf"]) == 0


def test_full_pipeline(cfg_file, tmp_path, capsys):
    d, m, s, v = (str(tmp_path / x) for x in ("data", "mi", "sel", "vfl"))
    common = ["--config", cfg_file]
    assert main(["gen-data", *common, "--out", d, "--T", "120", "--providers", "3"]) == 0
    assert (tmp_path / "data" / "profiles.json").is_file()
    assert main(["train-mi", *common, "--data", d, "--out", m, "--samples", "60"]) == 0
    assert main(["score", *common, "--data", d, "--models", m, "--out", s, "--samples", "60"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sel" / "scores.csv")))
    assert len(rows) == 5 * 3 * 2 and set(rows[0]) == {"segment", "provider", "mu", "sigma", "seed", "score"}
    assert main(["select", *common, "--scores", s, "--out", s]) == 0
    sel = json.loads((tmp_path / "sel" / "selection.json").read_text())
    assert all(sum(r) == 1 for r in sel["matrix"])
    for method in ("oracle", "random"):
        assert main(["select", *common, "--method", method, "--data", d, "--out", str(tmp_path / method)]) == 0
    assert main(["select", *common, "--method", "oracle", "--out", str(tmp_path / "x")]) == 2
    sel_json = str(tmp_path / "sel" / "selection.json")
    assert main(["train-vfl", *common, "--data", d, "--selection", sel_json, "--out", v]) == 0
    assert main(["train-vfl", *common, "--data", d, "--selection", sel_json, "--out", v + "c", "--mode", "central"]) == 0
    a = (tmp_path / "vfl" / "train_report.csv").read_text()
    b = (tmp_path / "vflc" / "train_report.csv").read_text()
    assert a.splitlines()[0] == "epoch,split,metric,state,value" and len(a.splitlines()) == len(b.splitlines())
    capsys.readouterr()
    assert main(["evaluate", *common, "--data", d, "--model", v, "--selection", sel_json, "--out", v]) == 0
    honest = json.loads(capsys.readouterr().out)
    assert main(["evaluate", *common, "--data", d, "--model", v, "--selection", sel_json, "--out", v,
                 "--lazy", "mp=3:random:1.0,mp=4:historical:1.0"]) == 0
    lazy = json.loads(capsys.readouterr().out)
    assert set(honest) == {"mae_flow", "mae_density", "rmse_flow", "rmse_density"} and lazy != honest
    assert main(["evaluate", *common, "--data", d, "--model", v, "--out", v, "--lazy", "mp=9:random:1.0"]) == 2
    assert main(["evaluate", *common, "--data", d, "--model", v, "--out", v, "--lazy", "bogus"]) == 2


def test_corrupt_dataset_exit_2(tmp_path, cfg_file):
    d = tmp_path / "data"
    assert main(["gen-data", "--config", cfg_file, "--out", str(d), "--providers", "0"]) == 0
    (d / "labels.csv").write_text("t,horizon\nbad\n")
    assert main(["train-mi", "--config", cfg_file, "--data", str(d), "--out", str(tmp_path / "m")]) == 2

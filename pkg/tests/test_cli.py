import json
import shutil
import subprocess

import pytest

from spinlab import cli
from spinlab.quadrature import ConvergenceError
from spinlab.results import parse_table, read_table

EIN = {"scaling_states": 2, "one_step_trajectories": 2000, "records": 5}
FP = {"fp_j": ["1/2", "2"], "fp_alpha": [-0.5, 0.5], "radial_tuples": 20,
      "bridge_samples": 20000, "bridge_points": 2, "bridge_theta": 0.005}


def _config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _resolve(argv):
    return cli.resolve_config(cli.build_parser().parse_args(argv))


def test_identities_pass_and_round_trip(tmp_path, capsys):
    out = tmp_path / "id.csv"
    assert cli.main(["identities", "--j", "1/2,1", "--workers", "1", "--out", str(out)]) == cli.EXIT_PASS
    table = read_table(out)
    assert set(table.column("status")) == {"pass"}
    assert set(table.column("j")) == {0.5, 1.0}
    meta = json.loads(table.metadata["config"])
    assert meta["j"] == ["1/2", "1"] and meta["seed"] == cli.DEFAULT_SEED
    assert json.loads(table.metadata["status_counts"])["pass"] == len(table.rows)
    assert "pass" in capsys.readouterr().err


def test_stdout_output_parses(capsys):
    assert cli.main(["identities", "--j", "1/2", "--workers", "1", "--format", "tsv"]) == 0
    table = parse_table(capsys.readouterr().out)
    assert table.fmt == "tsv" and table.names == [c.name for c in cli.COLUMNS]


def test_failing_check_exits_one(tmp_path):
    # 50 steps at theta = 0.2 is far too short for the decay-ratio threshold
    argv = ["einselect", "--j", "1/2", "--theta", "0.2", "--trajectories", "200", "--steps", "50",
            "--workers", "1", "--config", _config(tmp_path, EIN), "--out", str(tmp_path / "e.csv")]
    assert cli.main(argv) == cli.EXIT_FAIL
    table = read_table(tmp_path / "e.csv")
    failed = [c for c, s in zip(table.column("check"), table.column("status")) if s == "fail"]
    assert failed == ["uniaxial_decay_ratio"]


def test_nonconvergence_exits_three(tmp_path, monkeypatch):
    def give_up(*args, **kwargs):
        raise ConvergenceError("gave up")

    monkeypatch.setattr(cli, "reconstruct_rho_from_p", give_up)
    out = tmp_path / "p.csv"
    assert cli.main(["verify-p", "--j", "1/2", "--beta", "1", "--workers", "1", "--out", str(out)]) == 3
    assert "nonconverged" in read_table(out).column("status")


def test_uncaught_nonconvergence_exits_three(monkeypatch):
    def boom(cfg, workers=1):
        raise ConvergenceError("gave up", 1.0)

    monkeypatch.setitem(cli.RUNNERS, "identities", boom)
    assert cli.main(["identities", "--j", "1/2", "--workers", "1"]) == cli.EXIT_NONCONVERGED


@pytest.mark.parametrize("argv", [
    ["identities", "--j", "1/3"],
    ["identities", "--j", "0"],
    ["identities", "--theta", "0.7"],
    ["identities", "--beta", "-1"],
    ["identities", "--axis", "0,0,0"],
    ["identities", "--seed", "-4"],
    ["frobnicate"],
    [],
    ["thermalize", "--theta", "0.05"],
])
def test_usage_errors(argv, capsys):
    assert cli.main(argv) == cli.EXIT_USAGE


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["identities", "--config", str(bad)]) == 2
    assert cli.main(["identities", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["identities", "--config", _config(tmp_path, [1, 2])]) == 2
    assert cli.main(["identities", "--config", _config(tmp_path, {"bins": 3})]) == 2
    assert cli.main(["oscillator", "--config", _config(tmp_path, {"r": 1.0})]) == 2
    assert cli.main(["oscillator", "--config", _config(tmp_path, {"samples": 1000})]) == 2
    assert cli.main(["fokker-planck", "--config", _config(tmp_path, {"fp_alpha": [1.0]})]) == 2


def test_unwritable_output():
    assert cli.main(["identities", "--j", "1/2", "--workers", "1", "--out", "/nonexistent/dir/x.csv"]) == 2


def test_config_precedence(tmp_path):
    path = _config(tmp_path, {"seed": 5, "theta": [0.03, 0.02], "records": 7})
    cfg = _resolve(["einselect", "--config", path, "--seed", "9"])
    assert cfg["seed"] == 9
    assert cfg["theta"] == [0.03, 0.02]
    assert cfg["records"] == 7
    assert cfg["j"] == ["1/2", "1"]
    assert _resolve(["einselect"])["seed"] == cli.DEFAULT_SEED
    assert _resolve(["identities", "--tolerance-profile", "strict"]).tol("identity") == 1e-12


def _data(argv):
    table, code = cli.execute(_resolve(argv))
    return table.data_lines(), code


@pytest.mark.parametrize("argv, extra", [
    (["einselect", "--j", "1/2,1", "--theta", "0.2", "--trajectories", "300", "--steps", "40"], EIN),
    (["fokker-planck", "--j", "1/2", "--theta", "0.4", "--steps", "130", "--trajectories", "500"], FP),
    (["thermalize", "--j", "1/2", "--beta", "1", "--theta", "0.04,0.02", "--steps", "200",
      "--trajectories", "100"], {}),
    (["oscillator"], {"samples": 1 << 14, "seeds": 3}),
])
def test_results_independent_of_worker_count(argv, extra, tmp_path):
    path = _config(tmp_path, extra)
    one = _data(argv + ["--config", path, "--workers", "1"])
    two = _data(argv + ["--config", path, "--workers", "2"])
    assert one == two


def test_oscillator_reduced_run_passes(tmp_path):
    path = _config(tmp_path, {"samples": 1 << 16, "seeds": 10})
    assert cli.main(["oscillator", "--workers", "1", "--config", path]) == cli.EXIT_PASS


def test_subcommand_help_lists_checks(capsys):
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["thermalize", "--help"])
    assert "lindblad_slope" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("spinometer") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["spinometer", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "spinometer" in res.stdout
    res = subprocess.run(["spinometer", "identities", "--j", "1/3"], capture_output=True, text=True)
    assert res.returncode == 2 and "error" in res.stderr

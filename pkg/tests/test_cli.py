import json
import subprocess
import sys

import pytest

from metatrace.cli import build_settings, main, make_parser, parse_number, parse_seeds, UsageError


def test_parse_number():
    assert parse_number("2^-7") == 2.0**-7
    assert parse_number("2**-10") == 2.0**-10
    assert parse_number("6e-6") == 6e-6
    with pytest.raises(UsageError):
        parse_number("two")


def test_parse_seeds():
    assert parse_seeds("0-3,7") == (0, 1, 2, 3, 7)
    assert parse_seeds("5") == (5,)
    with pytest.raises(UsageError):
        parse_seeds("3-1")
    with pytest.raises(UsageError):
        parse_seeds("a")


def _settings(argv, lists=False):
    return build_settings(make_parser().parse_args(argv), allow_lists=lists)


def test_layering(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("# comment\ntuner = scalar\nmu=2^-9\nepisodes=50\nlambda=0.5\n")
    base, grid = _settings(["run", "--preset", "fig1", "--config", str(cfg_file),
                            "--episodes", "7", "--alpha0", "2^-8"])
    assert base.tuner == "scalar" and base.mu == 2.0**-9 and base.lam == 0.5
    assert base.episodes == 7 and base.alpha0 == 2.0**-8
    assert "alpha0" not in grid


def test_sweep_lists():
    base, grid = _settings(["sweep", "--tuner", "scalar", "--alpha0", "2^-7,2^-8",
                            "--mu", "2^-9"], lists=True)
    assert grid == {"alpha0": [2.0**-7, 2.0**-8]} and base.mu == 2.0**-9


def test_run_rejects_lists():
    with pytest.raises(UsageError):
        _settings(["run", "--alpha0", "2^-7,2^-8"])


def test_unnormalized_flag():
    base, _ = _settings(["run", "--unnormalized"])
    assert base.normalized is False


def test_run_writes_csv_and_summary(tmp_path, capsys):
    code = main(["run", "--episodes", "3", "--seeds", "0-1", "--tuner", "scalar",
                 "--mu", "2^-8", "--out", str(tmp_path)])
    assert code == 0
    (csv_file,) = tmp_path.glob("*.csv")
    (summary,) = tmp_path.glob("*.json")
    assert csv_file.read_text().count("\n") == 7
    data = json.loads(summary.read_text())
    assert data["config"]["tuner"] == "scalar" and data["diverged"] == {}


def test_zero_episodes_success(tmp_path):
    assert main(["run", "--episodes", "0", "--out", str(tmp_path)]) == 0


def test_all_diverged_exit_code(tmp_path):
    assert main(["run", "--alpha0", "8", "--episodes", "5", "--seeds", "0-1",
                 "--out", str(tmp_path)]) == 2


def test_sweep_all_diverged_exit_code(tmp_path):
    assert main(["sweep", "--alpha0", "4,8", "--episodes", "5", "--seeds", "0",
                 "--out", str(tmp_path)]) == 2


def test_sweep_cli(tmp_path):
    code = main(["sweep", "--tuner", "scalar", "--alpha0", "2^-7,2^-8", "--mu", "2^-8,2^-9",
                 "--episodes", "1", "--seeds", "0", "--out", str(tmp_path)])
    assert code == 0
    assert len(list(tmp_path.glob("*.csv"))) == 4


@pytest.mark.parametrize("argv", [
    ["run", "--bogus"],
    ["frobnicate"],
    ["run", "--env", "cartpole"],
    ["run", "--alpha0", "-1"],
    ["run", "--episodes", "2.5"],
])
def test_usage_errors_exit_one(argv, tmp_path):
    try:
        code = main(argv + ["--out", str(tmp_path)] if argv[0] == "run" else argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_bad_config_key(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("colour=blue\n")
    assert main(["run", "--config", str(f), "--out", str(tmp_path)]) == 1


def test_console_entry_point_check_quick():
    proc = subprocess.run([sys.executable, "-m", "metatrace.cli", "check", "--quick"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") == 4

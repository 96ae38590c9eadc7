import json

import pytest

from aggdiff.cli import EXIT_CONFIG, EXIT_FAILURE, main

HEAT = """
[grid]
cells = 32
bounds = 0, 1
boundary = periodic

[model]
internal = linear
initial = heat

[time]
t_end = 0.005
dt = 1e-3

[output]
tag = cli_heat
"""


@pytest.fixture
def heat_ini(tmp_path):
    path = tmp_path / "heat.ini"
    path.write_text(HEAT)
    return path


def test_run_writes_the_output_directory(heat_ini, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(heat_ini), "--out", str(out)]) == 0
    assert "t_end reached" in capsys.readouterr().out
    assert (out / "series.csv").exists()
    assert json.loads((out / "summary.json").read_text())["tag"] == "cli_heat"


def test_classify_prints_the_regime(capsys):
    assert main(["classify", "--m", "1.5", "--k", "-0.5", "--d", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["regime"] == "fair_competition"
    assert report["m_c"] == pytest.approx(1.5)


def test_preset_emit_prints_parseable_ini(capsys):
    assert main(["preset", "ks_fair_competition", "--variant", "supercritical", "--emit"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("#") or text.startswith("[grid]")
    assert "chi_c_factor = 4.0" in text


def test_configuration_errors_exit_with_2(tmp_path, capsys):
    assert main(["preset", "nope", "--emit"]) == EXIT_CONFIG
    assert "unknown preset" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\ncells = 32\n[model]\nkernel = power\nkernel.k = -3\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert "line 4" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main(["sweep", str(bad), "--param", "m"]) == EXIT_CONFIG


def test_solver_failure_exits_with_3(tmp_path):
    path = tmp_path / "unstable.ini"
    path.write_text("[grid]\ncells = 64\nbounds = -4, 4\n[model]\ninternal = linear\ninitial = gaussian\n"
                    "[time]\nintegrator = explicit_rk\ndt = 10\nt_end = 10\n")
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == EXIT_FAILURE


def test_missing_minimiser_exits_with_3(tmp_path):
    path = tmp_path / "spread.ini"
    path.write_text("[grid]\ncells = 64\nbounds = -4, 4\n[model]\ninternal = linear\ninitial = gaussian\n"
                    "[steady]\nwhole_space = yes\n")
    assert main(["steady", str(path), "--out", str(tmp_path)]) == EXIT_FAILURE


def test_sweep_prints_the_bracket(tmp_path, capsys):
    path = tmp_path / "sweep.ini"
    path.write_text("[grid]\ncells = 32\nbounds = 0, 4\nboundary = periodic\n[model]\ninternal = linear\n"
                    "kernel = gaussian\nkernel.amplitude = 1\nkernel.width = 0.3\ninitial = uniform\ninitial.mass = 4\n")
    assert main(["sweep", str(path), "--from", "0", "--to", "3", "--steps", "4", "--out", str(tmp_path)]) == 0
    assert "bifurcation between chi=1 and chi=2" in capsys.readouterr().out


def test_unknown_command_is_an_argparse_error():
    with pytest.raises(SystemExit):
        main(["explode"])

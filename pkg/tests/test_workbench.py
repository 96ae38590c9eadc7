import json
import os

import numpy as np
import pytest

from aggdiff.config import TimeSettings, parse_config, preset, with_overrides
from aggdiff.exceptions import ConfigError, TransportError
from aggdiff.mesh import Field, build_grid, center_of_mass, integrate, read_field
from aggdiff.profiles import bumps, gaussian
from aggdiff.solver import SolverConfig
from aggdiff.workbench import (
    EXIT_SOLVER,
    bump_census,
    energy_plateaus,
    read_series,
    run,
    run_geodesic,
    run_particles,
    run_steady,
    run_sweep,
    series_header,
    simulation_session,
)


def _config(body: str, cells: int = 64, bounds: str = "-4, 4", boundary: str = "no-flux"):
    return parse_config(f"[grid]\ncells = {cells}\nbounds = {bounds}\nboundary = {boundary}\n\n{body}")


def _short_heat(t_end=0.01):
    config = preset("heat")
    return with_overrides(config, time=TimeSettings(t_end, SolverConfig(dt=1e-3)))


def test_zero_dynamics_leave_the_state_alone(tmp_path):
    config = _config("[model]\ninitial = gaussian\ninitial.width = 0.5\n[time]\nt_end = 0.5\ndt = 0.1\n")
    result = run(config, str(tmp_path))
    assert result.status == 0
    assert result.steps == 5
    assert result.reason == "t_end reached"
    assert np.allclose(result.final[0].values, config.initial[0].values)


def test_mass_at_the_box_edge_is_reported_once(tmp_path, caplog):
    body = "[model]\ninternal = linear\ninitial = gaussian\ninitial.width = 0.5\n[time]\nt_end = 0.01\ndt = 0.005\n"
    with caplog.at_level("WARNING", logger="aggdiff.workbench"):
        run(_config(body, cells=32, bounds="-8, 8"), str(tmp_path / "wide"))
    assert "boundary of the box" not in caplog.text
    with caplog.at_level("WARNING", logger="aggdiff.workbench"):
        run(_config(body, cells=32, bounds="-1, 1"), str(tmp_path / "narrow"))
    assert caplog.text.count("boundary of the box") == 1


def test_heat_run_writes_series_snapshots_and_summary(tmp_path):
    result = run(_short_heat(), str(tmp_path))
    assert result.status == 0
    assert result.t == pytest.approx(0.01)
    header, data = read_series(str(tmp_path / "series.csv"))
    assert header == series_header(1)
    assert data.shape == (11, len(header))
    energy = data[:, header.index("E_total")]
    assert np.all(np.diff(energy) <= 1e-10)
    assert np.allclose(data[:, header.index("mass_1")], 1.0, rtol=1e-12)
    assert sorted(f for f in os.listdir(tmp_path) if f.endswith(".adfv")) == ["snap_000000.adfv", "snap_000010.adfv"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["steps"] == 10
    assert summary["box"]["boundary"] == "periodic"
    assert summary["tag"] == "heat"
    last = read_field(str(tmp_path / "snap_000010.adfv"))
    assert np.array_equal(last.values, result.final[0].values)


def test_series_are_byte_identical_across_runs(tmp_path):
    run(_short_heat(), str(tmp_path / "a"))
    run(_short_heat(), str(tmp_path / "b"))
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()


def test_session_writes_outputs_when_stepping_stops_early(tmp_path):
    with simulation_session(_short_heat(), str(tmp_path)) as sim:
        sim.advance()
        sim.advance()
    header, data = read_series(str(tmp_path / "series.csv"))
    assert data[:, 0].tolist() == [0.0, 1.0, 2.0]
    assert (tmp_path / "snap_000002.adfv").exists()


def test_explicit_instability_ends_the_run_with_solver_status(tmp_path):
    body = "[model]\ninternal = linear\ninitial = gaussian\n[time]\nintegrator = explicit_rk\ndt = 10\nt_end = 10\n"
    result = run(_config(body), str(tmp_path))
    assert result.status == EXIT_SOLVER
    assert result.reason.startswith("solver failure")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == EXIT_SOLVER


def test_max_density_stops_the_run(tmp_path):
    body = ("[model]\ninternal = power\ninternal.m = 2\nkernel = gaussian\nkernel.amplitude = 5\nkernel.width = 0.5\n"
            "initial = gaussian\ninitial.width = 1\n[time]\nt_end = 5\ndt = 0.05\nmax_density = 0.5\n")
    result = run(_config(body), str(tmp_path))
    assert result.status == 0
    assert result.reason == "max_density reached"
    assert result.t < 5


def test_bump_census(line_grid):
    three = bumps(line_grid, [-2.0, 0.0, 2.0], [0.2, 0.2, 0.2], [1.0, 1.0, 1.0])
    assert bump_census(three) == 3
    assert bump_census(gaussian(line_grid, width=0.5)) == 1
    assert bump_census(Field.zeros(line_grid)) == 0
    with pytest.raises(ConfigError):
        bump_census(gaussian(build_grid(2, 8, (-1.0, 1.0))))


def test_energy_plateaus():
    t = np.arange(11.0)
    e = [10.0, 8.0, 6.0, 4.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
    [plateau] = energy_plateaus(t, e, window=2.0, threshold=1e-3)
    assert (plateau.start, plateau.end, plateau.slope) == (5.0, 10.0, 0.0)
    assert energy_plateaus(t, e, window=6.0, threshold=1e-3) == []
    assert energy_plateaus([0.0], [1.0]) == []
    with pytest.raises(ValueError):
        energy_plateaus(t, e[:-1])


def test_run_steady_writes_the_minimiser(tmp_path):
    body = ("[model]\ninternal = linear\npotential = power\npotential.p = 2\npotential.strength = 0.5\n"
            "initial = gaussian\ninitial.center = 1\ninitial.width = 0.5\n")
    result = run_steady(_config(body, cells=128, bounds="-6, 6"), str(tmp_path))
    assert result.converged
    payload = json.loads((tmp_path / "steady.json").read_text())
    assert payload["converged"] is True
    assert len(payload["lagrange_constants"]) == 1
    assert integrate(read_field(str(tmp_path / "steady.adfv"))) == pytest.approx(1.0)


def test_run_sweep_brackets_the_instability(tmp_path):
    body = ("[model]\ninternal = linear\nkernel = gaussian\nkernel.amplitude = 1\nkernel.width = 0.3\n"
            "initial = uniform\ninitial.mass = 4\n[sweep]\nfrom = 0\nto = 3\nsteps = 4\n")
    config = _config(body, cells=32, bounds="0, 4", boundary="periodic")
    reports, bracket = run_sweep(config, str(tmp_path))
    assert [r.chi for r in reports] == [0.0, 1.0, 2.0, 3.0]
    assert bracket == (1.0, 2.0)
    assert (tmp_path / "sweep.csv").exists()


def test_run_particles_writes_trajectory_and_deposit(tmp_path):
    body = ("[model]\nkernel = gaussian\nkernel.amplitude = 1\nkernel.width = 0.5\ninitial = gaussian\n"
            "[particles]\nn = 40\ndt = 0.05\nsteps = 10\nrecord_every = 5\n")
    trajectory, gaps = run_particles(_config(body), str(tmp_path))
    assert len(trajectory) == 3
    assert gaps == []
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 40
    deposit = read_field(str(tmp_path / "particles_s1.adfv"))
    assert integrate(deposit) == pytest.approx(1.0)


def test_run_geodesic_moves_mass_between_the_data(tmp_path):
    left = _config("[model]\ninitial = gaussian\ninitial.center = -1\ninitial.width = 0.4\n")
    right = _config("[model]\ninitial = gaussian\ninitial.center = 1\ninitial.width = 0.4\n")
    frames = run_geodesic(left, right, 3, str(tmp_path), M=128)
    assert len(frames) == 3
    assert center_of_mass(frames[1])[0] == pytest.approx(0.0, abs=1e-2)
    assert center_of_mass(frames[0])[0] == pytest.approx(-1.0, abs=1e-2)
    assert all(integrate(f) == pytest.approx(1.0) for f in frames)
    assert (tmp_path / "frame_0002.adfv").exists()
    with pytest.raises(TransportError):
        run_geodesic(left, right, 1, str(tmp_path))
    with pytest.raises(TransportError):
        run_geodesic(left, _config("[model]\n", cells=32), 3, str(tmp_path))

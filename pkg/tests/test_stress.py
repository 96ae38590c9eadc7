import dataclasses
import os

import numpy as np
import pytest

from aggdiff.config import preset, with_overrides
from aggdiff.mesh import build_grid, integrate, moment, read_field
from aggdiff.profiles import bumps, gaussian, heat_periodic_exact
from aggdiff.solver import step_implicit
from aggdiff.specs import InternalEnergySpec, KernelSpec, ModelSpec, PotentialSpec
from aggdiff.stationary import fixed_point_minimiser
from aggdiff.workbench import bump_census, energy_plateaus, read_series, run, run_compare_jko

KERNELS = [
    KernelSpec.power(2.0, 0.5),
    KernelSpec.power(-0.5, 0.2),
    KernelSpec.log(0.2),
    KernelSpec.exponential(1.0, 1.0),
    KernelSpec.gaussian(1.0, 0.5),
    KernelSpec.characteristic(0.5, 1.0),
]


def _l1(a, b):
    return float(np.sum(np.abs(np.asarray(a.values) - np.asarray(b.values))) * a.grid.cell_volume)


def test_fokker_planck_long_time_limit_matches_the_minimiser():
    grid = build_grid(1, 256, (-6.0, 6.0))
    model = ModelSpec(InternalEnergySpec.linear(), PotentialSpec.power(2.0, 0.5))
    rho = gaussian(grid, center=1.5, width=0.5)
    energies = []
    for n in range(250):
        rho, report = step_implicit(model, rho, 0.1, t=n * 0.1)
        energies.append(report.energy.total)
    steady = fixed_point_minimiser(model, 1.0, gaussian(grid, width=2.0))
    target = gaussian(grid, center=0.0, width=1.0)
    assert _l1(rho, target) < 1e-3
    assert _l1(steady.density, target) < 1e-3
    assert _l1(rho, steady.density) < 1e-6
    relative = np.array(energies) - energies[-1]
    assert np.all(np.diff(relative) <= 1e-12)


def _random_configuration(index):
    rng = np.random.default_rng(1000 + index)
    dims = 1 + index % 2
    internal = InternalEnergySpec.linear() if (index // 2) % 2 == 0 else InternalEnergySpec.power(2.0)
    model = ModelSpec(internal, PotentialSpec.power(2.0, rng.uniform(0.05, 0.3)), KERNELS[index % len(KERNELS)])
    count = int(rng.integers(1, 4))
    widths = rng.uniform(0.3, 0.6, count)
    masses = rng.uniform(0.2, 0.6, count)
    if dims == 1:
        grid = build_grid(1, 48, (-3.0, 3.0))
        centers = list(rng.uniform(-1.2, 1.2, count))
    else:
        grid = build_grid(2, 16, (-2.0, 2.0))
        centers = [tuple(c) for c in rng.uniform(-0.8, 0.8, (count, 2))]
    return model, bumps(grid, centers, list(widths), list(masses), background=rng.uniform(1e-3, 0.02))


@pytest.mark.slow
@pytest.mark.parametrize("index", range(20))
def test_mass_positivity_and_dissipation_over_long_runs(index):
    model, rho = _random_configuration(index)
    mass = previous = integrate(rho)
    for n in range(1000):
        rho, report = step_implicit(model, rho, 0.01, t=n * 0.01)
        current = report.mass_per_species[0]
        assert abs(current - previous) <= 1e-12 * mass
        assert report.min_density >= 0.0
        assert report.monotone
        previous = current
    assert integrate(rho) == pytest.approx(mass, rel=1e-11)


@pytest.mark.slow
def test_heat_equation_is_first_order_in_space():
    errors = []
    for cells in (64, 128, 256):
        grid = build_grid(1, cells, (0.0, 1.0), "periodic")
        model = ModelSpec(InternalEnergySpec.linear())
        dt = grid.dx[0] ** 2 / 4.0
        steps = int(np.ceil(0.05 / dt))
        dt = 0.05 / steps
        rho = heat_periodic_exact(grid, 0.0)
        for n in range(steps):
            rho, _ = step_implicit(model, rho, dt, t=n * dt)
        errors.append(_l1(rho, heat_periodic_exact(grid, 0.05)))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders > 0.7)
    assert np.all(orders < 1.4)


@pytest.mark.slow
def test_jko_tracks_the_fokker_planck_preset(tmp_path):
    gap = run_compare_jko(preset("fokker_planck"), str(tmp_path))
    assert gap <= 0.05


@pytest.mark.slow
def test_subcritical_fair_competition_spreads(tmp_path):
    config = preset("ks_fair_competition", "subcritical")
    result = run(config, str(tmp_path))
    assert result.status == 0
    assert moment(result.final[0], 2) > moment(config.initial[0], 2)


@pytest.mark.slow
def test_supercritical_fair_competition_concentrates(tmp_path):
    config = preset("ks_fair_competition", "supercritical")
    result = run(config, str(tmp_path))
    assert result.status == 0
    assert result.final[0].max >= 10.0 * config.initial[0].max
    header, data = read_series(str(tmp_path / "series.csv"))
    energy = data[:, header.index("E_total")]
    assert energy.min() < -10.0 * abs(energy[0])


@pytest.mark.slow
def test_metastability_run_alternates_plateaus_and_mergers(tmp_path):
    config = preset("metastability")
    result = run(config, str(tmp_path))
    assert result.status == 0
    snapshots = sorted(f for f in os.listdir(tmp_path) if f.startswith("snap_"))
    census = [bump_census(read_field(str(tmp_path / name))) for name in snapshots]
    assert census[0] == 6
    assert census[-1] in (1, 2)
    assert all(later <= earlier for earlier, later in zip(census, census[1:]))
    header, data = read_series(str(tmp_path / "series.csv"))
    t, energy = data[:, header.index("t")], data[:, header.index("E_total")]
    assert np.all(np.diff(energy) <= 1e-9)
    assert data[-1, header.index("mass_1")] == pytest.approx(integrate(config.initial[0]), rel=1e-12)
    output = config.output
    plateaus = energy_plateaus(t, energy, output.plateau_window, output.plateau_threshold)
    assert len(plateaus) >= 2
    rates = np.abs(np.diff(energy)) / (np.diff(t) * np.max(np.abs(energy)))
    for before, after in zip(plateaus, plateaus[1:]):
        between = (t[:-1] >= before.end) & (t[1:] <= after.start)
        assert rates[between].max() >= 1e3 * max(before.slope, after.slope)


@pytest.mark.slow
def test_two_population_run_keeps_each_mass(tmp_path):
    config = preset("cellsort_halo")
    config = with_overrides(config, time=dataclasses.replace(config.time, t_end=1.0))
    masses = [integrate(f) for f in config.initial]
    result = run(config, str(tmp_path))
    assert result.status == 0
    assert [integrate(f) for f in result.final] == pytest.approx(masses, rel=1e-12)
    assert (tmp_path / "snap_s2_000020.adfv").exists()


def _mass_radius(rho, fraction=0.9):
    x, y = rho.grid.coordinates()
    r = np.hypot(x, y).ravel()
    order = np.argsort(r, kind="stable")
    cumulative = np.cumsum(np.asarray(rho.values).ravel()[order])
    return float(r[order][np.searchsorted(cumulative, fraction * cumulative[-1])])


@pytest.mark.slow
def test_cellsort_halo_envelops_the_strongly_adhesive_species(tmp_path):
    config = preset("cellsort_halo")
    result = run(config, str(tmp_path))
    assert result.status == 0
    core, halo = result.final
    assert _mass_radius(core) < _mass_radius(halo)
    middle = halo.grid.cells[0] // 2
    assert np.asarray(halo.values)[middle - 1:middle + 1, middle - 1:middle + 1].max() < 0.1 * halo.max

import math

import numpy as np
import pytest

from aggdiff.exceptions import TransportError
from aggdiff.mesh import Field, build_grid, integrate
from aggdiff.profiles import gaussian, uniform
from aggdiff.solver import SolverConfig
from aggdiff.specs import InternalEnergySpec, KernelSpec, ModelSpec, PotentialSpec, SpeciesSpec, SystemSpec
from aggdiff.transport import (
    ParticleEnsemble,
    QuantileRep,
    compare_jko,
    empirical_density,
    from_quantiles,
    geodesic_1d,
    jko_flow,
    jko_step_1d,
    meanfield_gap,
    particle_quantiles,
    particle_velocities,
    quantile_energy,
    sample_ensemble,
    simulate_particles,
    to_quantiles,
    w2_1d,
    write_trajectory_csv,
)


@pytest.fixture
def unit_interval():
    return build_grid(1, 100, (0.0, 1.0))


def test_quantiles_of_the_uniform_density(unit_interval):
    q = to_quantiles(uniform(unit_interval, mass=1.0), M=4)
    assert np.allclose(q.quantile_values, [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(q.levels, [0.125, 0.375, 0.625, 0.875])
    assert q.total_mass == pytest.approx(1.0)


def test_quantiles_of_a_single_cell():
    grid = build_grid(1, 10, (0.0, 10.0))
    values = np.zeros(10)
    values[3] = 2.0
    q = to_quantiles(Field(grid, values), M=2)
    assert np.allclose(q.quantile_values, [3.25, 3.75])
    assert q.total_mass == pytest.approx(2.0)


def test_quantile_rep_validation():
    with pytest.raises(TransportError):
        QuantileRep([1.0, 0.0])
    with pytest.raises(TransportError):
        QuantileRep([])
    with pytest.raises(TransportError):
        QuantileRep([0.0, np.inf])
    with pytest.raises(TransportError):
        to_quantiles(gaussian(build_grid(2, 8, (-1.0, 1.0))))


def test_from_quantiles_keeps_mass_and_shape(line_grid):
    rho = gaussian(line_grid, center=0.5, width=0.7, mass=1.7)
    back = from_quantiles(to_quantiles(rho, M=512), line_grid)
    assert integrate(back) == pytest.approx(1.7, rel=1e-12)
    assert np.sum(np.abs(back.values - rho.values)) * line_grid.dx[0] < 0.05


def test_w2_of_a_translation_is_the_shift(line_grid):
    a = to_quantiles(gaussian(line_grid, center=-0.5, width=0.5))
    b = to_quantiles(gaussian(line_grid, center=0.75, width=0.5))
    assert w2_1d(a, b) == pytest.approx(1.25, abs=1e-3)
    assert w2_1d(a, a) == 0.0
    with pytest.raises(TransportError):
        w2_1d(a, QuantileRep(np.zeros(3)))


def test_geodesic_moves_at_constant_speed(line_grid):
    a = to_quantiles(gaussian(line_grid, center=-1.0, width=0.3))
    b = to_quantiles(gaussian(line_grid, center=1.0, width=0.8))
    total = w2_1d(a, b)
    middle = geodesic_1d(a, b, 0.25)
    assert w2_1d(a, middle) == pytest.approx(0.25 * total)
    assert w2_1d(middle, b) == pytest.approx(0.75 * total)
    assert np.array_equal(geodesic_1d(a, b, 0.0).quantile_values, a.quantile_values)
    with pytest.raises(TransportError):
        geodesic_1d(a, b, 1.5)


def test_jko_without_energy_stays_put(line_grid):
    rho = gaussian(line_grid, width=0.6)
    step = jko_step_1d(rho, 0.1, ModelSpec(), M=64)
    assert np.allclose(step.quantiles.quantile_values, to_quantiles(rho, 64).quantile_values)
    assert step.objective_end == pytest.approx(step.objective_start)


def test_jko_with_quadratic_potential_contracts_quantiles():
    grid = build_grid(1, 256, (-6.0, 6.0))
    rho = gaussian(grid, center=1.5, width=0.5)
    model = ModelSpec(potential=PotentialSpec.power(2.0, 0.5))
    dt = 0.1
    q0 = to_quantiles(rho, 128)
    step = jko_step_1d(rho, dt, model, M=128, tol=1e-14)
    # without diffusion the proximal map of |x|^2 / 2 is x / (1 + dt)
    assert np.allclose(step.quantiles.quantile_values, q0.quantile_values / (1.0 + dt), atol=1e-7)
    assert step.energy_end < step.energy_start
    assert step.objective_end <= step.objective_start


def test_jko_flow_dissipates_energy():
    grid = build_grid(1, 256, (-6.0, 6.0))
    model = ModelSpec(InternalEnergySpec.linear(), PotentialSpec.power(2.0, 0.5))
    curve = jko_flow(gaussian(grid, center=1.5, width=0.5), 0.05, 5, model, M=96)
    assert len(curve) == 6
    energies = [quantile_energy(model, q) for q in curve]
    assert np.all(np.diff(energies) < 0)
    assert all(q.total_mass == pytest.approx(1.0) for q in curve)


def test_jko_refuses_singular_kernels(line_grid):
    with pytest.raises(TransportError):
        jko_step_1d(gaussian(line_grid), 0.1, ModelSpec(kernel=KernelSpec.log()))
    with pytest.raises(TransportError):
        jko_step_1d(gaussian(line_grid), 0.0, ModelSpec())


def test_jko_and_finite_volume_agree_on_fokker_planck():
    grid = build_grid(1, 256, (-6.0, 6.0))
    model = ModelSpec(InternalEnergySpec.linear(), PotentialSpec.power(2.0, 0.5))
    gap, jko, fv = compare_jko(model, gaussian(grid, center=1.5, width=0.5), 0.2, 0.02,
                               SolverConfig(dt=0.02), M=128)
    assert gap < 0.05
    assert integrate(fv) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(TransportError):
        compare_jko(model, gaussian(grid), 0.25, 0.1)


def test_ensemble_shapes_and_validation():
    ensemble = ParticleEnsemble((np.array([0.0, 1.0, 2.0]),), (1.0,))
    assert ensemble.count == 3
    assert ensemble.dims == 1
    assert ensemble.positions[0].shape == (3, 1)
    assert np.allclose(ensemble.center_of_mass(), [1.0])
    with pytest.raises(TransportError):
        ParticleEnsemble((np.zeros(3), np.zeros(4)), (1.0, 1.0))
    with pytest.raises(TransportError):
        ParticleEnsemble((np.zeros(3),), (1.0,), cutoff=0.0)


def test_sampling_is_seeded(square_grid):
    rho = gaussian(square_grid, width=0.5)
    first = sample_ensemble([rho], 200, seed=5)
    again = sample_ensemble([rho], 200, seed=5)
    assert np.array_equal(first.positions[0], again.positions[0])
    assert first.dims == 2
    assert first.masses == pytest.approx((1.0,))


def test_two_particles_close_their_gap_geometrically():
    chi, dt, steps = 2.0, 0.01, 50
    system = ModelSpec(kernel=KernelSpec.power(2.0, chi)).as_system()
    ensemble = ParticleEnsemble((np.array([-1.0, 1.0]),), (1.0,))
    final = simulate_particles(ensemble, system, dt, steps)[-1]
    x = final.positions[0][:, 0]
    assert x[1] - x[0] == pytest.approx(2.0 * (1.0 - chi * dt) ** steps, rel=1e-12)
    assert final.t == pytest.approx(steps * dt)


def test_symmetric_interaction_conserves_the_center_of_mass():
    system = ModelSpec(kernel=KernelSpec.gaussian(1.0, 0.5)).as_system()
    rng = np.random.default_rng(0)
    ensemble = ParticleEnsemble((rng.normal(size=(50, 2)),), (1.0,))
    trajectory = simulate_particles(ensemble, system, 0.05, 20, record_every=5)
    assert len(trajectory) == 5
    assert np.allclose(trajectory[-1].center_of_mass(), ensemble.center_of_mass(), atol=1e-12)


def test_potential_drives_particles_to_the_origin():
    system = ModelSpec(potential=PotentialSpec.power(2.0, 0.5)).as_system()
    ensemble = ParticleEnsemble((np.array([[1.0, -2.0]]),), (1.0,))
    (velocity,) = particle_velocities(ensemble, system)
    assert np.allclose(velocity, [[-1.0, 2.0]])


def test_cutoff_switches_the_interaction_off():
    system = ModelSpec(kernel=KernelSpec.power(2.0, 1.0)).as_system()
    far = ParticleEnsemble((np.array([0.0, 5.0]),), (1.0,), cutoff=1.0)
    assert np.allclose(particle_velocities(far, system)[0], 0.0)
    near = ParticleEnsemble((np.array([0.0, 0.5]),), (1.0,), cutoff=1.0)
    assert np.allclose(particle_velocities(near, system)[0][:, 0], [0.25, -0.25])


def test_particles_refuse_unbounded_gradients():
    system = ModelSpec(kernel=KernelSpec.power(0.5, 1.0)).as_system()
    with pytest.raises(TransportError):
        simulate_particles(ParticleEnsemble((np.zeros(2),), (1.0,)), system, 0.1, 1)


def test_empirical_density_keeps_the_mass(line_grid):
    ensemble = ParticleEnsemble((np.array([-1.0, 0.3, 0.31, 100.0]),), (2.0,))
    (rho,) = empirical_density(ensemble, line_grid)
    assert integrate(rho) == pytest.approx(2.0)
    assert rho.values[-1] == pytest.approx(0.5 / line_grid.dx[0])


def test_particle_quantiles_pick_order_statistics():
    q = particle_quantiles(np.array([3.0, 1.0, 2.0, 4.0]), M=4, total_mass=2.0)
    assert np.allclose(q.quantile_values, [1.0, 2.0, 3.0, 4.0])
    assert q.total_mass == 2.0


def test_meanfield_gap_shrinks_with_more_particles():
    grid = build_grid(1, 128, (-4.0, 4.0))
    system = ModelSpec(potential=PotentialSpec.power(2.0, 0.5), kernel=KernelSpec.gaussian(1.0, 0.5)).as_system()
    rho0 = gaussian(grid, width=0.8)
    gaps = meanfield_gap(system, [rho0], [16, 1024], 0.2, 0.02, seed=3, solver_config=SolverConfig(dt=0.02), M=64)
    assert [g.n for g in gaps] == [16, 1024]
    assert gaps[1].errors[0] < gaps[0].errors[0]
    eps_system = SystemSpec((SpeciesSpec(),), ((KernelSpec.zero(),),), epsilon=0.1)
    with pytest.raises(TransportError):
        meanfield_gap(eps_system, [rho0], [16], 0.2, 0.02)


@pytest.mark.slow
def test_two_species_meanfield_gap_shrinks_in_median_over_seeds():
    grid = build_grid(1, 256, (-4.0, 4.0))
    confined = SpeciesSpec(potential=PotentialSpec.power(2.0, 0.5))
    self_attraction, cross_attraction = KernelSpec.gaussian(1.0, 0.5), KernelSpec.gaussian(0.5, 0.5)
    system = SystemSpec(
        (confined, confined),
        ((self_attraction, cross_attraction), (cross_attraction, self_attraction)),
    )
    initial = [gaussian(grid, center=-1.0, width=0.6), gaussian(grid, center=1.0, width=0.6)]
    errors = {1000: [], 10000: []}
    for seed in range(5):
        gaps = meanfield_gap(system, initial, [1000, 10000], 0.1, 0.05, seed=seed,
                             solver_config=SolverConfig(dt=0.05), M=128)
        for gap in gaps:
            errors[gap.n].append(gap.errors)
    coarse = np.median(np.array(errors[1000]), axis=0)
    fine = np.median(np.array(errors[10000]), axis=0)
    assert coarse.shape == (2,)
    assert np.all(fine < coarse)


def test_trajectory_csv_layout(tmp_path):
    system = ModelSpec(kernel=KernelSpec.gaussian(1.0, 0.5)).as_system()
    ensemble = ParticleEnsemble((np.array([[0.0, 0.0], [1.0, 0.0]]),), (1.0,))
    trajectory = simulate_particles(ensemble, system, 0.1, 4, record_every=2)
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(str(path), trajectory, dt=0.1)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t,species,particle,x,y"
    assert len(lines) == 1 + 3 * 2
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "0", "2", "2", "4", "4"]


@pytest.mark.slow
def test_jko_converges_to_finite_volume_as_dt_shrinks():
    grid = build_grid(1, 512, (-6.0, 6.0))
    model = ModelSpec(InternalEnergySpec.power(2.0), PotentialSpec.power(2.0, 0.5))
    rho0 = gaussian(grid, center=1.0, width=0.5)
    coarse, _, _ = compare_jko(model, rho0, 0.5, 0.05, SolverConfig(dt=1e-3), M=256)
    fine, _, _ = compare_jko(model, rho0, 0.5, 0.0125, SolverConfig(dt=1e-3), M=256)
    assert fine < coarse
    assert math.isfinite(fine)

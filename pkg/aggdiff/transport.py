"""
One-dimensional optimal transport on quantile functions and the particle model.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import isotonic_regression, minimize

from .energetics import kernel_gradient, kernel_value, potential_at, potential_gradient, u_prime, u_value
from .exceptions import TransportError
from .mesh import Field, Grid, atomic_write, integrate
from .solver import SolverConfig, step_implicit, system_step
from .specs import KernelSpec, ModelSpec, SystemSpec

logger = logging.getLogger(__name__)

DEFAULT_QUANTILES = 256


@dataclass(frozen=True, eq=False)
class QuantileRep:
    quantile_values: np.ndarray
    total_mass: float = 1.0

    def __post_init__(self):
        q = np.array(self.quantile_values, dtype=float).ravel()
        if q.size < 1:
            raise TransportError("A quantile representation needs at least one quantile.")
        if not np.all(np.isfinite(q)):
            raise TransportError("Quantile values must be finite.")
        scale = max(1.0, float(np.max(np.abs(q))))
        if np.any(np.diff(q) < -1e-12 * scale):
            raise TransportError("Quantile values must be non-decreasing.")
        q.setflags(write=False)
        object.__setattr__(self, "quantile_values", q)

    @property
    def size(self) -> int:
        return self.quantile_values.size

    @property
    def levels(self) -> np.ndarray:
        return (np.arange(self.size) + 0.5) / self.size


def _require_1d(grid: Grid, what: str) -> None:
    if grid.dims != 1:
        raise TransportError(f"{what} works on 1D grids only.")


def to_quantiles(rho: Field, M: int = DEFAULT_QUANTILES) -> QuantileRep:
    """Invert the piecewise-linear CDF of the cell averages at the levels (j + 1/2) / M."""
    _require_1d(rho.grid, "to_quantiles")
    if M < 1:
        raise TransportError(f"M must be at least 1, got {M}.")
    values = np.asarray(rho.values, dtype=float)
    dx = rho.grid.dx[0]
    mass = integrate(rho)
    if not mass > 0:
        raise TransportError("Cannot take quantiles of a field with zero mass.")
    cell_mass = values * dx / mass
    filled = cell_mass > 0
    lefts = rho.grid.edges(0)[:-1][filled]
    weights = cell_mass[filled]
    after = np.cumsum(weights)
    after[-1] = 1.0
    before = after - weights
    levels = (np.arange(M) + 0.5) / M
    index = np.minimum(np.searchsorted(after, levels), weights.size - 1)
    fraction = np.clip((levels - before[index]) / weights[index], 0.0, 1.0)
    return QuantileRep(lefts[index] + fraction * dx, mass)


def _quantile_cdf_knots(q: QuantileRep) -> Tuple[np.ndarray, np.ndarray]:
    values = q.quantile_values
    if q.size == 1:
        return np.array([values[0], values[0]]), np.array([0.0, 1.0])
    head = values[0] - 0.5 * (values[1] - values[0])
    tail = values[-1] + 0.5 * (values[-1] - values[-2])
    knots = np.concatenate(([head], values, [tail]))
    return knots, np.concatenate(([0.0], q.levels, [1.0]))


def from_quantiles(q: QuantileRep, grid: Grid) -> Field:
    """
    Re-bin a quantile representation on a 1D grid, each interval between
    consecutive quantiles carrying mass uniformly. Mass outside the grid is
    folded into the boundary cells.
    """
    _require_1d(grid, "from_quantiles")
    knots, levels = _quantile_cdf_knots(q)
    edges = grid.edges(0)
    if q.size == 1 or knots[-1] == knots[0]:
        cdf = (edges >= knots[0]).astype(float)
    else:
        cdf = np.interp(edges, knots, levels, left=0.0, right=1.0)
    cdf[0], cdf[-1] = 0.0, 1.0
    cell_mass = np.maximum(np.diff(cdf), 0.0)
    cell_mass /= cell_mass.sum()
    return Field(grid, q.total_mass * cell_mass / grid.dx[0])


def _check_pair(a: QuantileRep, b: QuantileRep) -> None:
    if a.size != b.size:
        raise TransportError(f"Quantile sizes differ: {a.size} != {b.size}.")


def w2_1d(a: QuantileRep, b: QuantileRep) -> float:
    _check_pair(a, b)
    diff = a.quantile_values - b.quantile_values
    return float(np.sqrt(np.mean(diff**2)))


def geodesic_1d(a: QuantileRep, b: QuantileRep, t: float) -> QuantileRep:
    """Displacement interpolation (1 - t) a + t b."""
    _check_pair(a, b)
    if not 0.0 <= t <= 1.0:
        raise TransportError(f"t must lie in [0, 1], got {t}.")
    values = (1.0 - t) * a.quantile_values + t * b.quantile_values
    return QuantileRep(values, (1.0 - t) * a.total_mass + t * b.total_mass)


# ---------------------------------------------------------------------------
# JKO in quantile coordinates


@dataclass(frozen=True, eq=False)
class JkoStep:
    density: Optional[Field]
    quantiles: QuantileRep
    objective_start: float
    objective_end: float
    energy_start: float
    energy_end: float
    converged: bool
    iterations: int


def _pressure(internal, s: np.ndarray) -> np.ndarray:
    """P(s) = s U'(s) - U(s); the derivative of g U(c / g) in g is -P(c / g)."""
    return s * u_prime(internal, s) - u_value(internal, s)


def _energy_and_gradient(model: ModelSpec, q: np.ndarray, mass: float, min_gap: float):
    M = q.size
    c = mass / M
    energy = 0.0
    grad = np.zeros(M)
    if model.internal.variant != "none" and M > 1:
        gaps = np.maximum(np.diff(q), min_gap)
        density = c / gaps
        energy += float(np.sum(gaps * u_value(model.internal, density)))
        d_gap = -_pressure(model.internal, density)
        d_gap = np.where(np.diff(q) > min_gap, d_gap, 0.0)
        grad[1:] += d_gap
        grad[:-1] -= d_gap
    if not model.potential.is_zero:
        energy += c * float(np.sum(potential_at(model.potential, q, dims=1)))
        grad += c * potential_gradient(model.potential, q, dims=1)[..., 0]
    if not model.kernel.is_zero and M > 1:
        diff = q[:, None] - q[None, :]
        w = kernel_value(model.kernel, diff)
        np.fill_diagonal(w, 0.0)
        energy += 0.5 * c * c * float(np.sum(w))
        grad += c * c * np.sum(kernel_gradient(model.kernel, diff, dims=1)[..., 0], axis=1)
    return energy, grad


def quantile_energy(model: ModelSpec, q: QuantileRep) -> float:
    """
    Free energy of the measure described by q: mass/M at each quantile for V and W,
    density (mass/M) / (q_{j+1} - q_j) between consecutive quantiles for U.
    """
    values = q.quantile_values
    min_gap = 1e-12 * max(1.0, float(values[-1] - values[0]))
    return _energy_and_gradient(model, values, q.total_mass, min_gap)[0]


def _jko_quantile_step(q_prev: QuantileRep, dt: float, model: ModelSpec, tol: float, max_iter: int):
    if not dt > 0:
        raise TransportError("dt must be positive.")
    if model.kernel.is_singular:
        raise TransportError("JKO steps need a kernel that is finite at the origin.")
    mass = q_prev.total_mass
    prev = np.array(q_prev.quantile_values)
    c = mass / prev.size
    min_gap = 1e-12 * max(1.0, float(prev[-1] - prev[0]))

    def objective(x):
        energy, grad = _energy_and_gradient(model, x, mass, min_gap)
        step = x - prev
        return energy + c * float(step @ step) / (2.0 * dt), grad + c * step / dt

    start = objective(prev)[0]
    energy_start = _energy_and_gradient(model, prev, mass, min_gap)[0]
    result = minimize(objective, prev, jac=True, method="L-BFGS-B",
                      options={"ftol": tol, "gtol": 1e-12, "maxiter": max_iter})
    candidate = isotonic_regression(result.x).x
    value = objective(candidate)[0]
    logger.debug("JKO inner solve: %d iterations, objective %.12g -> %.12g", result.nit, start, value)
    if not value <= start:
        candidate, value = prev, start
    if not result.success:
        logger.warning("JKO inner minimisation did not converge: %s", result.message)
    q_next = QuantileRep(candidate, mass)
    energy_end = _energy_and_gradient(model, candidate, mass, min_gap)[0]
    return q_next, JkoStep(None, q_next, start, value, energy_start, energy_end, bool(result.success), result.nit)


def jko_step_1d(rho_k: Field, dt: float, model: ModelSpec, M: int = DEFAULT_QUANTILES, tol: float = 1e-9,
                max_iter: int = 15000) -> JkoStep:
    """argmin over densities of d2^2(rho, rho_k) / (2 dt) + F[rho], re-binned on the grid of rho_k."""
    _require_1d(rho_k.grid, "jko_step_1d")
    _, report = _jko_quantile_step(to_quantiles(rho_k, M), dt, model, tol, max_iter)
    return JkoStep(from_quantiles(report.quantiles, rho_k.grid), report.quantiles, report.objective_start,
                   report.objective_end, report.energy_start, report.energy_end, report.converged,
                   report.iterations)


def jko_flow(rho0: Field, dt: float, steps: int, model: ModelSpec, M: int = DEFAULT_QUANTILES,
             tol: float = 1e-9) -> List[QuantileRep]:
    """Iterated JKO steps, kept in quantile coordinates; the initial datum is the first entry."""
    q = to_quantiles(rho0, M)
    curve = [q]
    for n in range(steps):
        q, report = _jko_quantile_step(q, dt, model, tol, 15000)
        if not report.converged:
            logger.warning("JKO step %d flagged as not converged", n + 1)
        curve.append(q)
    return curve


def evolve_implicit(model, rho0, t_end: float, config: SolverConfig = None):
    """Implicit finite-volume steps from t = 0 to t_end (the last step is shortened to land on t_end)."""
    config = config or SolverConfig()
    state, t = rho0, 0.0
    while t < t_end - 1e-12 * max(1.0, t_end):
        dt = min(config.dt, t_end - t)
        if isinstance(model, SystemSpec):
            state, report = system_step(model, state, dt, config, t)
        else:
            state, report = step_implicit(model, state, dt, config, t)
        t = report.t
    return state


def compare_jko(model: ModelSpec, rho0: Field, t_end: float, dt: float, solver_config: SolverConfig = None,
                M: int = DEFAULT_QUANTILES) -> Tuple[float, QuantileRep, Field]:
    """w2 gap at t_end between the JKO curve with step dt and the implicit finite-volume solution."""
    steps = int(round(t_end / dt))
    if steps < 1 or abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise TransportError("t_end must be a positive multiple of the JKO step.")
    jko = jko_flow(rho0, dt, steps, model, M)[-1]
    fv = evolve_implicit(model, rho0, t_end, solver_config)
    gap = w2_1d(jko, to_quantiles(fv, M))
    logger.info("JKO vs finite volume at t=%.6g: w2 gap %.4e", t_end, gap)
    return gap, jko, fv


# ---------------------------------------------------------------------------
# particles


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: Tuple[np.ndarray, ...]
    masses: Tuple[float, ...]
    cutoff: float = math.inf
    t: float = 0.0

    def __post_init__(self):
        positions = []
        for p in self.positions:
            p = np.array(p, dtype=float)
            if p.ndim == 1:
                p = p[:, None]
            positions.append(p)
        if not positions:
            raise TransportError("An ensemble needs at least one species.")
        counts = {p.shape[0] for p in positions}
        if len(counts) != 1 or 0 in counts:
            raise TransportError("Every species needs the same positive number of particles.")
        if len({p.shape[1] for p in positions}) != 1:
            raise TransportError("All species must live in the same dimension.")
        if not all(np.all(np.isfinite(p)) for p in positions):
            raise TransportError("Particle positions must be finite.")
        if len(self.masses) != len(positions):
            raise TransportError("One mass per species is required.")
        if not self.cutoff > 0:
            raise TransportError("The cutoff radius must be positive.")
        object.__setattr__(self, "positions", tuple(positions))
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))

    @property
    def count(self) -> int:
        return self.positions[0].shape[0]

    @property
    def dims(self) -> int:
        return self.positions[0].shape[1]

    def center_of_mass(self) -> np.ndarray:
        """Mass-weighted center over all species."""
        total = sum(self.masses)
        return sum(m * p.mean(axis=0) for m, p in zip(self.masses, self.positions)) / total


def sample_ensemble(densities: Sequence[Field], n: int, seed: int = 0, cutoff: float = math.inf) -> ParticleEnsemble:
    """n particles per species drawn from the cell masses, uniformly inside each cell."""
    if n < 1:
        raise TransportError("n must be positive.")
    rng = np.random.default_rng(seed)
    positions, masses = [], []
    for rho in densities:
        grid = rho.grid
        weights = np.asarray(rho.values).ravel()
        total = weights.sum()
        if not total > 0:
            raise TransportError("Cannot sample particles from a field with zero mass.")
        cells = rng.choice(grid.size, size=n, p=weights / total)
        index = np.unravel_index(cells, grid.shape)
        coords = []
        for axis in range(grid.dims):
            lo = grid.edges(axis)[index[axis]]
            coords.append(lo + rng.uniform(0.0, grid.dx[axis], size=n))
        positions.append(np.stack(coords, axis=-1))
        masses.append(integrate(rho))
    return ParticleEnsemble(tuple(positions), tuple(masses), cutoff)


def _taper(r: np.ndarray, cutoff: float) -> Tuple[np.ndarray, np.ndarray]:
    """C1 smoothstep from 1 at 0.9 R down to 0 at R, with its derivative."""
    if math.isinf(cutoff):
        return np.ones_like(r), np.zeros_like(r)
    start = 0.9 * cutoff
    tau = np.clip((r - start) / (cutoff - start), 0.0, 1.0)
    value = 1.0 - 3.0 * tau**2 + 2.0 * tau**3
    slope = (-6.0 * tau + 6.0 * tau**2) / (cutoff - start)
    return value, slope


def _pair_velocity(kernel: KernelSpec, x: np.ndarray, y: np.ndarray, weight: float, cutoff: float,
                   chunk: int) -> np.ndarray:
    out = np.zeros_like(x)
    if kernel.is_zero:
        return out
    for start in range(0, x.shape[0], chunk):
        disp = x[start:start + chunk, None, :] - y[None, :, :]
        grad = kernel_gradient(kernel, disp, x.shape[1])
        if not math.isinf(cutoff):
            r = np.linalg.norm(disp, axis=-1, keepdims=True)
            value, slope = _taper(r, cutoff)
            with np.errstate(divide="ignore", invalid="ignore"):
                radial = np.where(r > 0, disp / np.where(r > 0, r, 1.0), 0.0)
            grad = value * grad + kernel_value(kernel, r) * slope * radial
        out[start:start + chunk] = -weight * grad.sum(axis=1)
    return out


def particle_velocities(ensemble: ParticleEnsemble, system: SystemSpec, chunk: int = 1024) -> List[np.ndarray]:
    """dx_i/dt = -sum_b (m_b / N) sum_j grad W_ab(x_i - y_j) - grad V_a(x_i), per species a."""
    if system.size != len(ensemble.positions):
        raise TransportError(f"System has {system.size} species, ensemble has {len(ensemble.positions)}.")
    n = ensemble.count
    out = []
    for a, x in enumerate(ensemble.positions):
        v = np.zeros_like(x)
        for b, y in enumerate(ensemble.positions):
            v += _pair_velocity(system.coupling[a][b], x, y, ensemble.masses[b] / n, ensemble.cutoff, chunk)
        potential = system.species[a].potential
        if not potential.is_zero:
            v -= potential_gradient(potential, x, ensemble.dims)
        out.append(v)
    return out


def simulate_particles(ensemble: ParticleEnsemble, system: SystemSpec, dt: float, steps: int,
                       seed: Optional[int] = None, record_every: int = 1, chunk: int = 1024) -> List[ParticleEnsemble]:
    """
    Explicit Euler for the particle ODE; returns the trajectory with the initial
    ensemble first and then every `record_every`-th step. The dynamics carry no
    noise, so `seed` has no effect on them.
    """
    for row in system.coupling:
        for kernel in row:
            if not kernel.is_zero and not kernel.has_bounded_gradient:
                raise TransportError(f"Particles need kernels with bounded gradients, got {kernel.variant}.")
    if not dt > 0 or steps < 0 or record_every < 1:
        raise TransportError("Need dt > 0, steps >= 0 and record_every >= 1.")
    trajectory = [ensemble]
    current = ensemble
    for step in range(1, steps + 1):
        velocities = particle_velocities(current, system, chunk)
        positions = tuple(p + dt * v for p, v in zip(current.positions, velocities))
        current = ParticleEnsemble(positions, current.masses, current.cutoff, current.t + dt)
        if step % record_every == 0 or step == steps:
            trajectory.append(current)
    return trajectory


def empirical_density(ensemble: ParticleEnsemble, grid: Grid) -> List[Field]:
    """Nearest-grid-point deposit of (m / N) per particle; particles outside the box go to the boundary cell."""
    if ensemble.dims != grid.dims:
        raise TransportError("Ensemble and grid dimensions differ.")
    out = []
    for mass, positions in zip(ensemble.masses, ensemble.positions):
        index = []
        for axis in range(grid.dims):
            lo = grid.bounds[axis][0]
            raw = np.floor((positions[:, axis] - lo) / grid.dx[axis]).astype(int)
            clamped = np.clip(raw, 0, grid.cells[axis] - 1)
            outside = int(np.count_nonzero(raw != clamped))
            if outside:
                logger.warning("%d particles outside the grid along axis %d clamped to the boundary cell",
                               outside, axis)
            index.append(clamped)
        flat = np.ravel_multi_index(tuple(index), grid.shape)
        counts = np.bincount(flat, minlength=grid.size).reshape(grid.shape)
        out.append(Field(grid, counts * (mass / ensemble.count) / grid.cell_volume))
    return out


def particle_quantiles(positions: np.ndarray, M: int = DEFAULT_QUANTILES, total_mass: float = 1.0) -> QuantileRep:
    """Quantiles of the empirical measure of 1D positions at the levels (j + 1/2) / M."""
    x = np.sort(np.asarray(positions, dtype=float).ravel())
    if x.size == 0:
        raise TransportError("No particles.")
    levels = (np.arange(M) + 0.5) / M
    return QuantileRep(x[np.minimum((levels * x.size).astype(int), x.size - 1)], total_mass)


@dataclass(frozen=True)
class MeanFieldGap:
    n: int
    errors: Tuple[float, ...] = field(default_factory=tuple)


def meanfield_gap(system: SystemSpec, initial: Sequence[Field], ensemble_sizes: Sequence[int], t_end: float,
                  dt: float, seed: int = 0, solver_config: SolverConfig = None,
                  M: int = DEFAULT_QUANTILES) -> List[MeanFieldGap]:
    """
    For each N: sample N particles per species from the initial densities, run
    particles and PDE to t_end and report the w2 distance per species.
    """
    grid = initial[0].grid
    _require_1d(grid, "meanfield_gap")
    if system.epsilon > 0:
        raise TransportError("Particle comparisons need epsilon = 0.")
    steps = int(round(t_end / dt)) if t_end > 0 else 0
    if steps and abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise TransportError("t_end must be a multiple of dt.")
    pde = list(initial) if steps == 0 else evolve_implicit(system, list(initial), t_end, solver_config)
    targets = [to_quantiles(rho, M) for rho in pde]
    out = []
    for n in ensemble_sizes:
        ensemble = sample_ensemble(initial, n, seed)
        final = simulate_particles(ensemble, system, dt, steps, record_every=max(steps, 1))[-1]
        errors = tuple(
            w2_1d(particle_quantiles(p, M, m), q) for p, m, q in zip(final.positions, final.masses, targets)
        )
        logger.info("N=%d: w2 errors %s", n, ", ".join(f"{e:.3e}" for e in errors))
        out.append(MeanFieldGap(int(n), errors))
    return out


def write_trajectory_csv(path: str, trajectory: Sequence[ParticleEnsemble], dt: float = None) -> None:
    """
    One row per particle per recorded ensemble: step, t, species, particle, x[, y].
    The step column is t / dt when dt is given and the record index otherwise.
    """
    if not trajectory:
        raise TransportError("Empty trajectory.")
    dims = trajectory[0].dims
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["step", "t", "species", "particle"] + ["x", "y"][:dims])
    for index, ensemble in enumerate(trajectory):
        step = int(round(ensemble.t / dt)) if dt else index
        for a, positions in enumerate(ensemble.positions):
            for i, point in enumerate(positions):
                writer.writerow([step, repr(ensemble.t), a, i] + [repr(float(c)) for c in point])
    atomic_write(path, buffer.getvalue().encode())

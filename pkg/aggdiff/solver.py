"""
Finite-volume upwind schemes for aggregation-diffusion equations and systems.

The implicit step evaluates W*rho at the midpoint (rho^n + rho^{n+1}) / 2 and the
rest at rho^{n+1}; every density it returns comes out of a linear upwind solve with
unit column sums. 2D grids are advanced by Lie splitting, one sub-step per axis.
"""

import functools
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, spsolve

from .energetics import (
    EnergyBreakdown,
    convolve_array,
    diffusion_coefficient,
    free_energy_system,
    mobility_derivative,
    mobility_factor,
    mobility_value,
    potential_field,
    u_prime,
    u_second,
)
from .exceptions import ConvergenceError, GridError, ModelError, SolverError, StabilityError
from .mesh import Field, Grid, cell_sum, integrate
from .specs import ModelSpec, SystemSpec

logger = logging.getLogger(__name__)

INTEGRATORS = ("implicit", "explicit_rk")
EPS = np.finfo(float).eps


class _NotConverged(Exception):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    cfl: float = 0.5
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    time_integrator: str = "implicit"
    newton: bool = True
    implicit_relax: float = 20.0
    dt_max: float = 1.0
    max_halvings: int = 10
    rk_order: int = 2

    def __post_init__(self):
        if not self.dt > 0 or not self.dt_max > 0:
            raise SolverError("dt and dt_max must be positive.")
        if not 0 < self.cfl <= 1:
            raise SolverError(f"cfl must lie in (0, 1], got {self.cfl}.")
        if not self.picard_tol > 0 or self.picard_max_iter < 1:
            raise SolverError("picard_tol and picard_max_iter must be positive.")
        if self.time_integrator not in INTEGRATORS:
            raise SolverError(f"Unknown time integrator '{self.time_integrator}', expected one of {INTEGRATORS}.")
        if self.rk_order not in (1, 2):
            raise SolverError(f"rk_order must be 1 (forward Euler) or 2 (SSP-RK2), got {self.rk_order}.")
        if not self.implicit_relax >= 1 or self.max_halvings < 0:
            raise SolverError("implicit_relax must be >= 1 and max_halvings >= 0.")


@dataclass(frozen=True, eq=False)
class FluxAssembly:
    xi: np.ndarray
    u: Tuple[np.ndarray, ...]
    flux: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class StepReport:
    t: float
    dt_used: float
    mass_per_species: Tuple[float, ...]
    min_density: float
    energy: EnergyBreakdown
    dissipation_bound: float
    energy_drop: float
    picard_iters: int
    monotone: bool
    gradient_flow: bool = True


# ---------------------------------------------------------------------------
# discrete operators


def upwind_flux(mobility_left, mobility_right, u):
    """F = m(rho_i) u^+ + m(rho_{i+1}) u^-."""
    u = np.asarray(u, dtype=float)
    return mobility_left * np.maximum(u, 0.0) + mobility_right * np.minimum(u, 0.0)


def _boundary_slot(grid: Grid, axis: int) -> tuple:
    index = [slice(None)] * grid.dims
    index[axis] = -1
    return tuple(index)


def interface_velocity(xi: np.ndarray, grid: Grid, axis: int = 0) -> np.ndarray:
    u = -(np.roll(xi, -1, axis=axis) - xi) / grid.dx[axis]
    if not grid.periodic:
        u[_boundary_slot(grid, axis)] = 0.0
    return u


def _divergence(flux: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    return (flux - np.roll(flux, 1, axis=axis)) / grid.dx[axis]


@functools.lru_cache(maxsize=32)
def _potential_values(potential, grid: Grid) -> np.ndarray:
    values = potential_field(potential, grid)
    values.setflags(write=False)
    return values


class _SystemOperator:
    """xi and its pieces for every species of a system on one grid."""

    def __init__(self, system: SystemSpec, grid: Grid):
        self.system = system
        self.grid = grid
        for row in system.coupling:
            for kernel in row:
                kernel.check_dimension(grid.dims)
        self.potentials = [
            None if s.potential.is_zero else _potential_values(s.potential, grid) for s in system.species
        ]

    @property
    def n(self) -> int:
        return self.system.size

    def nonlocal_terms(self, conv: Sequence[np.ndarray]) -> List[np.ndarray]:
        out = []
        for a in range(self.n):
            term = np.zeros(self.grid.shape)
            for b in range(self.n):
                kernel = self.system.coupling[a][b]
                if not kernel.is_zero:
                    term = term + convolve_array(kernel, self.grid, conv[b], "fft")
            out.append(term)
        return out

    def local_terms(self, values: Sequence[np.ndarray]) -> List[np.ndarray]:
        eps = self.system.epsilon
        crowd = eps * sum(values) if eps > 0 else 0.0
        out = []
        for a, species in enumerate(self.system.species):
            term = u_prime(species.internal, values[a]) + crowd
            if self.potentials[a] is not None:
                term = term + self.potentials[a]
            out.append(np.broadcast_to(term, self.grid.shape).astype(float))
        return out

    def xi(self, values, conv) -> List[np.ndarray]:
        return [lo + nl for lo, nl in zip(self.local_terms(values), self.nonlocal_terms(conv))]

    def fluxes(self, values, xi, axis: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        us, fs = [], []
        for a, species in enumerate(self.system.species):
            u = interface_velocity(xi[a], self.grid, axis)
            mob = mobility_value(species.mobility, values[a])
            us.append(u)
            fs.append(upwind_flux(mob, np.roll(mob, -1, axis=axis), u))
        return us, fs

    def rhs(self, values, conv=None) -> List[np.ndarray]:
        conv = values if conv is None else conv
        xi = self.xi(values, conv)
        out = [np.zeros(self.grid.shape) for _ in range(self.n)]
        for axis in range(self.grid.dims):
            _, fluxes = self.fluxes(values, xi, axis)
            for a in range(self.n):
                out[a] -= _divergence(fluxes[a], self.grid, axis)
        return out

    def energy(self, values) -> EnergyBreakdown:
        return free_energy_system(self.system, [Field(self.grid, v) for v in values])

    def dissipation_bound(self, values, conv, axes: Sequence[int]) -> float:
        """-sum over interfaces of min(m(rho_i), m(rho_{i+1})) |u|^2 dV."""
        xi = self.xi(values, conv)
        total = 0.0
        for axis in axes:
            for a, species in enumerate(self.system.species):
                u = interface_velocity(xi[a], self.grid, axis)
                mob = mobility_value(species.mobility, values[a])
                weight = np.minimum(mob, np.roll(mob, -1, axis=axis))
                total -= cell_sum(weight * u**2) * self.grid.cell_volume
        return total

    # -- implicit machinery; arrays below are in "line" layout with the transport axis last

    def _line_indices(self, axis: int):
        shape = np.moveaxis(np.empty(self.grid.shape), axis, -1).shape
        idx = np.arange(self.grid.size).reshape(shape)
        ip = np.roll(idx, -1, axis=-1)
        mask = np.ones(shape, dtype=bool)
        if not self.grid.periodic:
            mask[..., -1] = False
        return idx[mask], ip[mask], mask

    def picard_update(self, values, values_n, nonlocal_, dt: float, axis: int) -> List[np.ndarray]:
        """Freeze xi (and the mobility factor) at `values` and solve the linear upwind system."""
        grid = self.grid
        e, ip, mask = self._line_indices(axis)
        c = dt / grid.dx[axis]
        identity = sparse.identity(grid.size, format="csc")
        local = self.local_terms(values)
        out = []
        for a, species in enumerate(self.system.species):
            u = np.moveaxis(interface_velocity(local[a] + nonlocal_[a], grid, axis), axis, -1)
            g = np.moveaxis(mobility_factor(species.mobility, values[a]), axis, -1)
            left = (g * np.maximum(u, 0.0))[mask]
            right = (np.roll(g, -1, axis=-1) * np.minimum(u, 0.0))[mask]
            matrix = identity + _flux_operator(e, ip, left, right, c, grid.size)
            rhs = np.moveaxis(values_n[a], axis, -1).ravel()
            solution = splu(matrix.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0).solve(rhs)
            shape = np.moveaxis(values_n[a], axis, -1).shape
            out.append(np.moveaxis(solution.reshape(shape), -1, axis))
        return out

    def newton_update(self, values, values_n, nonlocal_, dt: float, axis: int) -> List[np.ndarray]:
        """One Newton step on the local part of xi with the nonlocal part held fixed."""
        grid = self.grid
        n, size = self.n, grid.size
        e, ip, mask = self._line_indices(axis)
        c = dt / grid.dx[axis]
        dx = grid.dx[axis]
        eps = self.system.epsilon
        local = self.local_terms(values)
        rows, cols, data = [np.arange(n * size)], [np.arange(n * size)], [np.ones(n * size)]
        residual = []
        for a, species in enumerate(self.system.species):
            rho = np.moveaxis(values[a], axis, -1)
            u = np.moveaxis(interface_velocity(local[a] + nonlocal_[a], grid, axis), axis, -1)
            up, um = np.maximum(u, 0.0), np.minimum(u, 0.0)
            mob = mobility_value(species.mobility, rho)
            mob_ip = np.roll(mob, -1, axis=-1)
            flux = up * mob + um * mob_ip
            flux[~mask] = 0.0
            div = (flux - np.roll(flux, 1, axis=-1)) / dx
            residual.append((rho - np.moveaxis(values_n[a], axis, -1) + dt * div).ravel())

            upwind = np.where(u > 0, mob, np.where(u < 0, mob_ip, 0.5 * (mob + mob_ip)))
            floor = max(1e-12 * float(rho.max()), 1e-300)
            curvature = u_second(species.internal, np.maximum(rho, floor)) + eps
            dmob = mobility_derivative(species.mobility, rho)
            for b in range(n):
                h = curvature if b == a else np.full(rho.shape, eps)
                if b != a and eps == 0:
                    continue
                alpha = upwind * h / dx
                beta = -upwind * np.roll(h, -1, axis=-1) / dx
                if b == a:
                    alpha = alpha + dmob * up
                    beta = beta + np.roll(dmob, -1, axis=-1) * um
                r, q, d = _flux_entries(e, ip, alpha[mask], beta[mask], c)
                rows.append(r + a * size)
                cols.append(q + b * size)
                data.append(d)
        jacobian = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n * size, n * size)
        ).tocsc()
        delta = spsolve(jacobian, np.concatenate(residual))
        out = []
        for a in range(n):
            rho = np.moveaxis(values[a], axis, -1)
            step = np.asarray(delta[a * size:(a + 1) * size]).reshape(rho.shape)
            out.append(np.moveaxis(rho - step, -1, axis))
        return out


def _flux_entries(e, ip, left, right, c):
    """COO entries of c * Div(Flux) for fluxes F_e = left * x_e + right * x_ip."""
    rows = np.concatenate([e, e, ip, ip])
    cols = np.concatenate([e, ip, e, ip])
    data = c * np.concatenate([left, right, -left, -right])
    return rows, cols, data


def _flux_operator(e, ip, left, right, c, size) -> sparse.csc_matrix:
    rows, cols, data = _flux_entries(e, ip, left, right, c)
    return sparse.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsc()


# ---------------------------------------------------------------------------
# public API


def _normalise(model: Union[ModelSpec, SystemSpec], state) -> Tuple[SystemSpec, List[Field], bool]:
    single = isinstance(model, ModelSpec)
    system = model.as_system() if single else model
    fields = [state] if isinstance(state, Field) else list(state)
    if len(fields) != system.size:
        raise ModelError(f"Expected {system.size} species fields, got {len(fields)}.")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields[1:]):
        raise GridError("All species must live on the same grid.")
    return system, fields, single


def assemble_flux(model: Union[ModelSpec, SystemSpec], rho, rho_for_convolution=None):
    """
    xi, interface velocities and upwind fluxes (one array per axis). Returns a
    FluxAssembly for a single model and a list of them for a system.
    """
    system, fields, single = _normalise(model, rho)
    conv_fields = fields if rho_for_convolution is None else _normalise(model, rho_for_convolution)[1]
    op = _SystemOperator(system, fields[0].grid)
    values = [np.asarray(f.values) for f in fields]
    xi = op.xi(values, [np.asarray(f.values) for f in conv_fields])
    if not all(np.all(np.isfinite(x)) for x in xi):
        raise SolverError("xi is not finite; check the density and the model parameters.")
    per_axis = [op.fluxes(values, xi, axis) for axis in range(op.grid.dims)]
    out = [
        FluxAssembly(xi[a], tuple(us[a] for us, _ in per_axis), tuple(fs[a] for _, fs in per_axis))
        for a in range(system.size)
    ]
    return out[0] if single else out


def rhs_semidiscrete(model: Union[ModelSpec, SystemSpec], rho):
    """d rho_i / dt = -sum over axes of (F_{i+1/2} - F_{i-1/2}) / dx."""
    system, fields, single = _normalise(model, rho)
    op = _SystemOperator(system, fields[0].grid)
    out = op.rhs([np.asarray(f.values) for f in fields])
    return out[0] if single else out


def _monotone(drop: float, bound: float, dt: float, e_start: float, e_end: float, tol: float) -> bool:
    slack = 10.0 * tol + 64.0 * EPS * (abs(e_start) + abs(e_end)) / dt
    return drop / dt <= bound + slack


def _implicit_axis_solve(op: _SystemOperator, values_n, dt: float, axis: int, config: SolverConfig):
    rho = [np.array(v, dtype=float) for v in values_n]
    for iteration in range(1, config.picard_max_iter + 1):
        nonlocal_ = op.nonlocal_terms([0.5 * (vn + v) for vn, v in zip(values_n, rho)])
        candidate = None
        if config.newton:
            candidate = op.newton_update(rho, values_n, nonlocal_, dt, axis)
            if not all(np.all(np.isfinite(c)) for c in candidate):
                candidate = op.picard_update(rho, values_n, nonlocal_, dt, axis)
            elif any(np.any(c < 0) for c in candidate):
                clipped = [np.maximum(c, 0.0) for c in candidate]
                candidate = op.picard_update(clipped, values_n, nonlocal_, dt, axis)
        else:
            candidate = op.picard_update(rho, values_n, nonlocal_, dt, axis)
        change = max(float(np.max(np.abs(c - r))) for c, r in zip(candidate, rho))
        rho = candidate
        scale = max(1.0, max(float(np.max(r)) for r in rho))
        logger.debug("axis %d iteration %d: sup change %.3e", axis, iteration, change)
        if not np.isfinite(change):
            break
        if change <= config.picard_tol * scale:
            nonlocal_ = op.nonlocal_terms([0.5 * (vn + v) for vn, v in zip(values_n, rho)])
            return op.picard_update(rho, values_n, nonlocal_, dt, axis), iteration + 1
    raise _NotConverged(f"no convergence along axis {axis} within {config.picard_max_iter} iterations")


def _implicit_advance(system: SystemSpec, fields: List[Field], dt: float, config: SolverConfig, axes, t: float):
    grid = fields[0].grid
    op = _SystemOperator(system, grid)
    start = [np.asarray(f.values) for f in fields]
    e_start = op.energy(start)
    attempt_dt = dt
    for halving in range(config.max_halvings + 1):
        try:
            values = start
            energy = e_start
            iterations, bound, monotone = 0, 0.0, True
            for axis in axes:
                new, used = _implicit_axis_solve(op, values, attempt_dt, axis, config)
                iterations += used
                e_new = op.energy(new)
                sub_bound = op.dissipation_bound(new, [0.5 * (v + w) for v, w in zip(values, new)], (axis,))
                sub_drop = e_new.total - energy.total
                if not _monotone(sub_drop, sub_bound, attempt_dt, energy.total, e_new.total, config.picard_tol):
                    monotone = False
                bound += sub_bound
                values, energy = new, e_new
            break
        except _NotConverged as ex:
            if halving == config.max_halvings:
                raise ConvergenceError(f"Implicit step failed after {halving} dt halvings: {ex}")
            attempt_dt *= 0.5
            logger.info("implicit step did not converge (%s); retrying with dt=%.3e", ex, attempt_dt)
    if attempt_dt < dt:
        logger.info("implicit step completed with dt=%.3e after halving", attempt_dt)
    out = [Field(grid, v) for v in values]
    report = StepReport(
        t=t + attempt_dt,
        dt_used=attempt_dt,
        mass_per_species=tuple(integrate(f) for f in out),
        min_density=min(f.min for f in out),
        energy=energy,
        dissipation_bound=bound,
        energy_drop=energy.total - e_start.total,
        picard_iters=iterations,
        monotone=monotone,
        gradient_flow=system.is_symmetric,
    )
    if not monotone:
        level = logging.WARNING if report.gradient_flow else logging.DEBUG
        logger.log(level, "dissipation check failed at t=%.6g: drop/dt=%.3e bound=%.3e",
                   report.t, report.energy_drop / attempt_dt, bound)
    return out, report


def _resolve_axes(grid: Grid, axis_order) -> Tuple[int, ...]:
    axes = tuple(range(grid.dims)) if axis_order is None else tuple(int(a) for a in axis_order)
    if not axes or any(a < 0 or a >= grid.dims for a in axes):
        raise GridError(f"Invalid axis order {axis_order} for a {grid.dims}D grid.")
    return axes


def step_implicit(model: ModelSpec, rho_n: Field, dt: float, config: SolverConfig = None, t: float = 0.0):
    """
    One implicit step. Returns (rho_{n+1}, StepReport); 2D grids are split by axis.
    StepReport.dt_used is smaller than dt when the nonlinear solve needed dt halvings.
    """
    if rho_n.grid.dims == 2:
        return step_2d_split(model, rho_n, dt, config, t=t)
    system, fields, single = _normalise(model, rho_n)
    out, report = _implicit_advance(system, fields, dt, config or SolverConfig(), (0,), t)
    return (out[0] if single else out), report


def step_2d_split(model, rho_n, dt: float, config: SolverConfig = None, axis_order=(0, 1), t: float = 0.0):
    """Lie splitting: one implicit sub-step per entry of `axis_order`."""
    system, fields, single = _normalise(model, rho_n)
    grid = fields[0].grid
    if grid.dims != 2:
        raise GridError("step_2d_split needs a 2D grid.")
    axes = _resolve_axes(grid, axis_order)
    out, report = _implicit_advance(system, fields, dt, config or SolverConfig(), axes, t)
    return (out[0] if single else out), report


def system_step(system: SystemSpec, state: Sequence[Field], dt: float, config: SolverConfig = None,
                t: float = 0.0, axis_order=None):
    """
    Implicit step for all species at once; returns (new fields, StepReport) where the
    report carries the mass of every species and the joint free energy.
    """
    system, fields, _ = _normalise(system, state)
    axes = _resolve_axes(fields[0].grid, axis_order)
    return _implicit_advance(system, fields, dt, config or SolverConfig(), axes, t)


def _outflow_rate(op: _SystemOperator, values) -> float:
    """max over cells of (sum of outgoing upwind velocities times g) / dx."""
    xi = op.xi(values, values)
    worst = 0.0
    for a, species in enumerate(op.system.species):
        rate = np.zeros(op.grid.shape)
        g = mobility_factor(species.mobility, values[a])
        for axis in range(op.grid.dims):
            u = interface_velocity(xi[a], op.grid, axis)
            rate += g * (np.maximum(u, 0.0) - np.minimum(np.roll(u, 1, axis=axis), 0.0)) / op.grid.dx[axis]
        worst = max(worst, float(rate.max()))
    return worst


def _explicit_stage(op: _SystemOperator, values, dt: float):
    rate = _outflow_rate(op, values)
    if dt * rate > 1.0 + 1e-12:
        raise StabilityError(f"Explicit step violates the positivity bound: dt*rate = {dt * rate:.3f} > 1.")
    rhs = op.rhs(values)
    return [v + dt * r for v, r in zip(values, rhs)]


def step_explicit(model: Union[ModelSpec, SystemSpec], rho_n, dt: float, config: SolverConfig = None,
                  t: float = 0.0):
    """Forward Euler (rk_order=1) or SSP-RK2 update of the semi-discrete scheme."""
    config = config or SolverConfig(time_integrator="explicit_rk")
    system, fields, single = _normalise(model, rho_n)
    grid = fields[0].grid
    op = _SystemOperator(system, grid)
    start = [np.asarray(f.values) for f in fields]
    stage = _explicit_stage(op, start, dt)
    if config.rk_order == 2:
        second = _explicit_stage(op, stage, dt)
        stage = [0.5 * v + 0.5 * w for v, w in zip(start, second)]
    out = [Field(grid, v) for v in stage]
    e_start, e_end = op.energy(start), op.energy(stage)
    drop = e_end.total - e_start.total
    report = StepReport(
        t=t + dt,
        dt_used=dt,
        mass_per_species=tuple(integrate(f) for f in out),
        min_density=min(f.min for f in out),
        energy=e_end,
        dissipation_bound=op.dissipation_bound(stage, stage, range(grid.dims)),
        energy_drop=drop,
        picard_iters=0,
        monotone=drop <= 64.0 * EPS * (abs(e_start.total) + abs(e_end.total)),
        gradient_flow=system.is_symmetric,
    )
    return (out[0] if single else out), report


def adaptive_dt(model: Union[ModelSpec, SystemSpec], rho, cfl: float = 0.5, integrator: str = "explicit_rk",
                relax: float = 20.0, dt_max: float = 1.0) -> float:
    """
    cfl * min(dx / max|u|, dx^2 / (2 d D)) with D = max s U''(s) (+ eps * total density);
    relaxed by `relax` for the implicit integrator and capped at dt_max. Returns dt_max
    when there is neither transport nor diffusion.
    """
    if integrator not in INTEGRATORS:
        raise SolverError(f"Unknown time integrator '{integrator}'.")
    system, fields, _ = _normalise(model, rho)
    grid = fields[0].grid
    op = _SystemOperator(system, grid)
    values = [np.asarray(f.values) for f in fields]
    xi = op.xi(values, values)
    vmax = 0.0
    for axis in range(grid.dims):
        for a in range(system.size):
            vmax = max(vmax, float(np.max(np.abs(interface_velocity(xi[a], grid, axis)))))
    diffusion = 0.0
    for species, v in zip(system.species, values):
        if species.internal.variant != "none":
            diffusion = max(diffusion, float(np.max(diffusion_coefficient(species.internal, v))))
    if system.epsilon > 0:
        diffusion += system.epsilon * float(np.max(sum(values)))
    dx = min(grid.dx)
    bounds = []
    if vmax > 0:
        bounds.append(dx / vmax)
    if diffusion > 0:
        bounds.append(dx**2 / (2.0 * grid.dims * diffusion))
    if not bounds:
        return dt_max
    dt = cfl * min(bounds)
    if integrator == "implicit":
        dt *= relax
    return min(dt, dt_max)

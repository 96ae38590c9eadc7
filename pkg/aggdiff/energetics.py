"""
Energy densities, potentials, interaction kernels and the discrete free energy.
"""

import functools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import RegularGridInterpolator
from scipy.special import xlogy

from .exceptions import GridError, ModelError
from .mesh import Field, Grid, cell_sum
from .specs import (
    InternalEnergySpec,
    KernelSpec,
    MobilitySpec,
    ModelSpec,
    PotentialSpec,
    SystemSpec,
)

# log(rho) is evaluated as log(max(rho, LOG_FLOOR)); the upwind flux multiplies
# by rho, so the limit flux out of an empty cell stays 0.
LOG_FLOOR = 1e-300


def _nonnegative(s, what: str = "density") -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ModelError(f"{what} must be non-negative (min {np.min(s):.3e}).")
    return s


def u_value(spec: InternalEnergySpec, s):
    """U(s), continuously extended by U(0) = 0."""
    s = _nonnegative(s)
    if spec.variant == "none":
        return np.zeros_like(s)
    if spec.variant == "linear":
        return xlogy(s, s)
    return s**spec.m / (spec.m - 1.0)


def u_prime(spec: InternalEnergySpec, s):
    """U'(s), with log and negative powers regularised at s = 0."""
    s = _nonnegative(s)
    if spec.variant == "none":
        return np.zeros_like(s)
    if spec.variant == "linear":
        return 1.0 + np.log(np.maximum(s, LOG_FLOOR))
    m = spec.m
    if m < 1:
        s = np.maximum(s, LOG_FLOOR)
    return m / (m - 1.0) * s ** (m - 1.0)


def u_second(spec: InternalEnergySpec, s):
    """U''(s) = m s^(m-2) (1/s for linear diffusion); infinite at s = 0 when m < 2."""
    s = _nonnegative(s)
    if spec.variant == "none":
        return np.zeros_like(s)
    with np.errstate(divide="ignore"):
        if spec.variant == "linear":
            return 1.0 / s
        return spec.m * s ** (spec.m - 2.0)


def u_prime_inverse(spec: InternalEnergySpec, y):
    """
    Inverse of U' extended by 0 below the range of U', i.e. the map
    y -> max{0, (U')^-1(y)} used by the fixed-point form of the Euler-Lagrange
    condition. For 0 < m < 1, U' maps (0, inf) onto (-inf, 0) and y must be negative.
    """
    y = np.asarray(y, dtype=float)
    if spec.variant == "none":
        raise ModelError("U' has no inverse when the internal energy is zero.")
    if spec.variant == "linear":
        return np.exp(y - 1.0)
    m = spec.m
    if m < 1:
        if np.any(y >= 0):
            raise ModelError(f"U' maps onto (-inf, 0) for m={m} < 1; y = {float(np.max(y)):.3e} has no preimage.")
        return ((m - 1.0) / m * y) ** (1.0 / (m - 1.0))
    base = np.maximum(y, 0.0) * (m - 1.0) / m
    return base ** (1.0 / (m - 1.0))


def diffusion_coefficient(spec: InternalEnergySpec, s):
    """s U''(s): m s^(m-1) for power diffusion and 1 for linear diffusion."""
    s = _nonnegative(s)
    if spec.variant == "none":
        return np.zeros_like(s)
    if spec.variant == "linear":
        return np.ones_like(s)
    if spec.m < 1:
        s = np.maximum(s, LOG_FLOOR)
    return spec.m * s ** (spec.m - 1.0)


def mobility_value(spec: MobilitySpec, s):
    s = _nonnegative(s)
    if spec.variant == "linear":
        return s.copy() if s.ndim else s
    return np.maximum(0.0, s * (1.0 - s / spec.rho_max))


def mobility_factor(spec: MobilitySpec, s) -> np.ndarray:
    """g(s) with m(s) = g(s) s: the frozen coefficient of the linearised flux."""
    s = np.asarray(s, dtype=float)
    if spec.variant == "linear":
        return np.ones_like(s)
    return np.maximum(0.0, 1.0 - s / spec.rho_max)


def mobility_derivative(spec: MobilitySpec, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if spec.variant == "linear":
        return np.ones_like(s)
    return np.where(s < spec.rho_max, 1.0 - 2.0 * s / spec.rho_max, 0.0)


# ---------------------------------------------------------------------------
# potentials


def _radius(coords: Sequence[np.ndarray]) -> np.ndarray:
    return np.sqrt(sum(np.asarray(x, dtype=float) ** 2 for x in coords))


def _radial_potential(spec: PotentialSpec, r: np.ndarray) -> np.ndarray:
    if spec.variant == "zero":
        return np.zeros_like(r)
    if spec.variant == "power":
        return spec.strength * r**spec.p
    return spec.a * r**4 - spec.b * r**2


def _table_values(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    table = spec.table
    if not isinstance(table, Field):
        raise ModelError("custom_table potential must hold a Field.")
    if table.grid != grid:
        raise GridError("custom_table potential was sampled on a different grid.")
    return np.array(table.values) - spec.offset


def potential_field(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    """V evaluated at the cell centers (any sign)."""
    if spec.variant == "custom_table":
        return _table_values(spec, grid)
    return _radial_potential(spec, _radius(grid.coordinates()))


def _as_points(points, dims: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if dims == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    return pts


def _table_interpolator(spec: PotentialSpec, values: np.ndarray) -> RegularGridInterpolator:
    grid = spec.table.grid
    axes = [grid.centers(a) for a in range(grid.dims)]
    return RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)


def potential_at(spec: PotentialSpec, points, dims: int = 1) -> np.ndarray:
    """V at arbitrary points; 1D points may be given as a flat array."""
    pts = _as_points(points, dims)
    if spec.variant == "custom_table":
        values = np.array(spec.table.values) - spec.offset
        return _table_interpolator(spec, values)(pts.reshape(-1, dims)).reshape(pts.shape[:-1])
    r = np.linalg.norm(pts, axis=-1)
    return _radial_potential(spec, r)


def potential_gradient(spec: PotentialSpec, points, dims: int = 1) -> np.ndarray:
    """grad V at points, shape (..., dims)."""
    pts = _as_points(points, dims)
    if spec.variant == "custom_table":
        grid = spec.table.grid
        slopes = np.gradient(np.array(spec.table.values), *grid.dx)
        if grid.dims == 1:
            slopes = [slopes]
        flat = pts.reshape(-1, dims)
        out = np.stack([_table_interpolator(spec, s)(flat) for s in slopes], axis=-1)
        return out.reshape(pts.shape)
    if spec.variant == "zero":
        return np.zeros_like(pts)
    r = np.linalg.norm(pts, axis=-1, keepdims=True)
    if spec.variant == "power":
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, spec.strength * spec.p * r ** (spec.p - 2.0), 0.0)
        return scale * pts
    return (4.0 * spec.a * r**2 - 2.0 * spec.b) * pts


# ---------------------------------------------------------------------------
# kernels


def kernel_value(spec: KernelSpec, r) -> np.ndarray:
    """Radial profile w(r) of W at distances r >= 0 (singular kernels give inf at 0)."""
    r = np.abs(np.asarray(r, dtype=float))
    if spec.is_zero:
        return np.zeros_like(r)
    with np.errstate(divide="ignore"):
        if spec.variant == "power":
            return spec.strength * r**spec.k / spec.k
        if spec.variant == "log":
            return spec.strength * np.log(r)
    if spec.variant == "exponential":
        return -spec.strength * np.exp(-r / spec.length)
    if spec.variant == "gaussian":
        return -spec.strength * np.exp(-(r**2) / (2.0 * spec.length**2))
    return np.where(r < spec.length, -spec.strength, 0.0)


def _radial_derivative(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    if spec.is_zero or spec.variant == "characteristic":
        return np.zeros_like(r)
    if spec.variant == "power":
        return spec.strength * r ** (spec.k - 1.0)
    if spec.variant == "log":
        return spec.strength / r
    if spec.variant == "exponential":
        return spec.strength / spec.length * np.exp(-r / spec.length)
    return spec.strength * r / spec.length**2 * np.exp(-(r**2) / (2.0 * spec.length**2))


def kernel_gradient(spec: KernelSpec, displacement, dims: int = 1) -> np.ndarray:
    """
    grad W at displacements x (shape (..., dims)); taken as 0 at x = 0, which is
    the odd extension particles rely on. Kernels whose gradient is unbounded at
    the origin are refused.
    """
    if not spec.has_bounded_gradient:
        raise ModelError(f"grad W is unbounded or singular for the {spec.variant} kernel.")
    x = _as_points(displacement, dims)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, _radial_derivative(spec, r) / np.where(r > 0, r, 1.0), 0.0)
    return scale * x


def _offsets(grid: Grid, axis: int) -> np.ndarray:
    """Integer offsets per weight slot: minimal images when periodic, -(N-1)..N-1 otherwise."""
    n = grid.cells[axis]
    if grid.periodic:
        j = np.arange(n)
        return np.where(j <= n // 2, j, j - n)
    return np.arange(-(n - 1), n)


def _cell_average_1d(spec: KernelSpec, offsets: np.ndarray, dx: float) -> np.ndarray:
    lo = (offsets - 0.5) * dx
    hi = (offsets + 0.5) * dx
    chi = spec.strength
    if spec.variant == "log":

        def antiderivative(s):
            return xlogy(s, np.abs(s)) - s

        return chi * (antiderivative(hi) - antiderivative(lo)) / dx
    k = spec.k

    def antiderivative(s):
        return np.sign(s) * np.abs(s) ** (k + 1.0) / (k + 1.0)

    return chi / k * (antiderivative(hi) - antiderivative(lo)) / dx


def _disc_average(spec: KernelSpec, r0: float) -> float:
    if spec.variant == "log":
        return spec.strength * (np.log(r0) - 0.5)
    return spec.strength / spec.k * 2.0 * r0**spec.k / (spec.k + 2.0)


@functools.lru_cache(maxsize=64)
def kernel_weights(spec: KernelSpec, grid: Grid) -> np.ndarray:
    """
    Weight table w indexed by offset slot: shape grid.shape when periodic, and
    (2N-1) slots per axis (offset m at slot m + N - 1) on no-flux grids.
    """
    spec.check_dimension(grid.dims)
    if spec.variant == "power" and grid.dims == 1 and not spec.k > -1:
        raise ModelError(f"Power kernel needs k > -1 in 1D, got k={spec.k}.")
    offsets = [_offsets(grid, a) for a in range(grid.dims)]
    if spec.is_zero:
        shape = tuple(len(o) for o in offsets)
        weights = np.zeros(shape)
    elif spec.is_singular and grid.dims == 1:
        weights = _cell_average_1d(spec, offsets[0], grid.dx[0])
    else:
        mesh = np.meshgrid(*[o * h for o, h in zip(offsets, grid.dx)], indexing="ij")
        r = _radius(mesh)
        with np.errstate(divide="ignore", invalid="ignore"):
            weights = kernel_value(spec, r)
        if spec.is_singular:
            zero = tuple(int(np.flatnonzero(o == 0)[0]) for o in offsets)
            weights[zero] = _disc_average(spec, np.sqrt(grid.cell_volume / np.pi))
    weights = np.asarray(weights, dtype=float)
    weights.setflags(write=False)
    return weights


def _check_grid(rho: Field, grid: Grid) -> None:
    if rho.grid != grid:
        raise GridError("Field lives on a different grid.")


@functools.lru_cache(maxsize=8)
def interaction_matrix(spec: KernelSpec, grid: Grid) -> np.ndarray:
    """Dense matrix K with (W*rho) = K @ rho.ravel() * dV; the direct-sum reference."""
    weights = kernel_weights(spec, grid)
    index = np.indices(grid.shape).reshape(grid.dims, -1)
    slots = []
    for a in range(grid.dims):
        diff = index[a][:, None] - index[a][None, :]
        if grid.periodic:
            slots.append(np.mod(diff, grid.cells[a]))
        else:
            slots.append(diff + grid.cells[a] - 1)
    matrix = weights[tuple(slots)]
    matrix.setflags(write=False)
    return matrix


@functools.lru_cache(maxsize=64)
def _kernel_transform(spec: KernelSpec, grid: Grid):
    weights = kernel_weights(spec, grid)
    if grid.periodic:
        shape = grid.shape
    else:
        shape = tuple(sfft.next_fast_len(2 * n - 1, real=True) for n in grid.shape)
    transform = sfft.rfftn(weights, s=shape)
    transform.setflags(write=False)
    return transform, shape


def convolve_array(spec: KernelSpec, grid: Grid, values: np.ndarray, method: str) -> np.ndarray:
    if spec.is_zero:
        return np.zeros(grid.shape)
    if method == "direct":
        return (interaction_matrix(spec, grid) @ values.ravel()).reshape(grid.shape) * grid.cell_volume
    if method != "fft":
        raise ValueError(f"Unknown convolution method '{method}'.")
    transform, shape = _kernel_transform(spec, grid)
    full = sfft.irfftn(transform * sfft.rfftn(values, s=shape), s=shape)
    if not grid.periodic:
        window = tuple(slice(n - 1, 2 * n - 1) for n in grid.shape)
        full = full[window]
    return full * grid.cell_volume


def convolve(kernel: KernelSpec, rho: Field, method: str = "fft") -> np.ndarray:
    """(W*rho)_i on the grid of rho, by FFT (default) or by the direct dense sum."""
    return convolve_array(kernel, rho.grid, np.asarray(rho.values), method)


# ---------------------------------------------------------------------------
# free energy


@dataclass(frozen=True)
class EnergyBreakdown:
    internal: float
    potential: float
    interaction: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.internal + self.potential + self.interaction)

    @classmethod
    def zero(cls) -> "EnergyBreakdown":
        return cls(0.0, 0.0, 0.0)


def _species_fields(state) -> list:
    if isinstance(state, Field):
        return [state]
    return list(state)


def free_energy_system(system: SystemSpec, states: Sequence[Field]) -> EnergyBreakdown:
    """
    Internal and potential parts summed over species; interaction sums
    1/2 <rho_a, W_ab * rho_b> over ordered pairs plus (eps/2) sum_i (sum_a rho_a,i)^2 dV.
    """
    states = _species_fields(states)
    if len(states) != system.size:
        raise ModelError(f"System has {system.size} species, got {len(states)} fields.")
    grid = states[0].grid
    for rho in states[1:]:
        _check_grid(rho, grid)
    vol = grid.cell_volume
    internal = potential = interaction = 0.0
    for a, (species, rho) in enumerate(zip(system.species, states)):
        values = np.asarray(rho.values)
        internal += cell_sum(u_value(species.internal, values)) * vol
        if not species.potential.is_zero:
            potential += cell_sum(potential_field(species.potential, grid) * values) * vol
        for b, other in enumerate(states):
            kernel = system.coupling[a][b]
            if kernel.is_zero:
                continue
            conv = convolve_array(kernel, grid, np.asarray(other.values), "fft")
            interaction += 0.5 * cell_sum(values * conv) * vol
    if system.epsilon > 0:
        total_density = sum(np.asarray(rho.values) for rho in states)
        interaction += 0.5 * system.epsilon * cell_sum(total_density**2) * vol
    return EnergyBreakdown(internal, potential, interaction)


def free_energy(model: Union[ModelSpec, SystemSpec], state) -> EnergyBreakdown:
    if isinstance(model, ModelSpec):
        states = _species_fields(state)
        if len(states) != 1:
            raise ModelError("A single-species model takes exactly one field.")
        return free_energy_system(model.as_system(), states)
    return free_energy_system(model, state)

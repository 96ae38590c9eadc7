"""Initial data and exact solutions used as oracles."""

from typing import List, Sequence

import numpy as np
from scipy.special import beta as beta_function

from .exceptions import GridError, ModelError
from .mesh import Field, Grid, integrate


def _normalised(grid: Grid, values: np.ndarray, mass: float) -> Field:
    field = Field(grid, values)
    total = integrate(field)
    if total <= 0:
        raise GridError("Profile has no mass on this grid; is it centred inside the box?")
    return Field(grid, np.asarray(field.values) * (mass / total))


def _squared_distance(grid: Grid, center) -> np.ndarray:
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dims,))
    return sum((x - ci) ** 2 for x, ci in zip(grid.coordinates(), c))


def gaussian(grid: Grid, center=0.0, width: float = 1.0, mass: float = 1.0) -> Field:
    values = np.exp(-_squared_distance(grid, center) / (2.0 * width**2))
    return _normalised(grid, values, mass)


def bumps(grid: Grid, centers: Sequence, widths: Sequence[float], masses: Sequence[float],
          background: float = 0.0) -> Field:
    """Sum of Gaussian bumps, each carrying its own mass, on an optional constant background."""
    if not (len(centers) == len(widths) == len(masses)):
        raise GridError("bumps needs as many widths and masses as centers.")
    values = np.full(grid.shape, float(background))
    for center, width, mass in zip(centers, widths, masses):
        values = values + np.asarray(gaussian(grid, center, width, mass).values)
    return Field(grid, values)


def uniform(grid: Grid, mass: float = None, value: float = 1.0) -> Field:
    level = value if mass is None else mass / grid.volume
    return Field(grid, np.full(grid.shape, float(level)))


def compact_bump(grid: Grid, radius: float, exponent: float = 1.0, center=0.0, mass: float = 1.0) -> Field:
    values = np.maximum(1.0 - _squared_distance(grid, center) / radius**2, 0.0) ** exponent
    return _normalised(grid, values, mass)


def barenblatt_constants(m: float, dims: int, mass: float = 1.0):
    """
    Constants (alpha, beta, kappa, C) of the Barenblatt solution
        rho(x, t) = t^-alpha (C - kappa |x|^2 t^-2beta)_+^(1/(m-1))
    with beta = 1/(d(m-1)+2), alpha = d beta, kappa = beta(m-1)/(2m), and C fixed by mass.
    """
    if not m > 1:
        raise ModelError(f"Barenblatt profiles need m > 1, got {m}.")
    if dims not in (1, 2):
        raise ModelError("Barenblatt profiles are provided in 1D and 2D.")
    beta = 1.0 / (dims * (m - 1.0) + 2.0)
    alpha = dims * beta
    kappa = beta * (m - 1.0) / (2.0 * m)
    p = 1.0 / (m - 1.0)
    if dims == 1:
        # mass = C^(p+1/2) kappa^-1/2 B(1/2, p+1)
        c = (mass * np.sqrt(kappa) / beta_function(0.5, p + 1.0)) ** (1.0 / (p + 0.5))
    else:
        # mass = pi C^(p+1) / (kappa (p+1))
        c = (mass * kappa * (p + 1.0) / np.pi) ** (1.0 / (p + 1.0))
    return alpha, beta, kappa, c


def barenblatt_values(grid: Grid, m: float, t: float, mass: float = 1.0, center=0.0) -> np.ndarray:
    alpha, beta, kappa, c = barenblatt_constants(m, grid.dims, mass)
    r2 = _squared_distance(grid, center)
    return t ** (-alpha) * np.maximum(c - kappa * r2 * t ** (-2.0 * beta), 0.0) ** (1.0 / (m - 1.0))


def barenblatt(grid: Grid, m: float, t: float, mass: float = 1.0, center=0.0) -> Field:
    """The Barenblatt profile sampled at cell centers."""
    if not t > 0:
        raise ModelError("Barenblatt profiles need t > 0.")
    return Field(grid, barenblatt_values(grid, m, t, mass, center))


def barenblatt_support_radius(m: float, dims: int, t: float, mass: float = 1.0) -> float:
    _, beta, kappa, c = barenblatt_constants(m, dims, mass)
    return float(np.sqrt(c / kappa) * t**beta)


def heat_periodic_exact(grid: Grid, t: float, amplitude: float = 0.5) -> Field:
    """Cell averages of the periodic heat solution with a single cosine mode."""
    if grid.dims != 1 or not grid.periodic:
        raise GridError("heat_periodic_exact needs a periodic 1D grid.")
    lo, hi = grid.bounds[0]
    wave = 2.0 * np.pi / (hi - lo)
    edges = grid.edges(0) - lo
    mean_cos = (np.sin(wave * edges[1:]) - np.sin(wave * edges[:-1])) / (wave * grid.dx[0])
    return Field(grid, 1.0 + amplitude * np.exp(-(wave**2) * t) * mean_cos)


def two_population_discs(grid: Grid, radius: float, masses: Sequence[float] = (1.0, 1.0),
                         noise: float = 0.2, seed: int = 0, edge: float = None) -> List[Field]:
    """
    Two species mixed inside a disc (an interval in 1D) with a smoothed edge and
    independent seeded perturbations, the usual starting point for sorting runs.
    """
    rng = np.random.default_rng(seed)
    edge = edge if edge is not None else 2.0 * max(grid.dx)
    r = np.sqrt(_squared_distance(grid, 0.0))
    disc = 0.5 * (1.0 - np.tanh((r - radius) / edge))
    out = []
    for mass in masses:
        bumpiness = 1.0 + noise * rng.uniform(-1.0, 1.0, size=grid.shape)
        out.append(_normalised(grid, disc * bumpiness, mass))
    return out

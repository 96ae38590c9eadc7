"""
Steady states, linear stability of constant states and the homogeneous-kernel toolbox.
"""

import csv
import io
import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, ndimage
from scipy.optimize import brentq

from .energetics import (
    convolve,
    convolve_array,
    kernel_weights,
    potential_field,
    u_prime_inverse,
)
from .exceptions import ModelError, NoMinimiserError, StationaryError
from .mesh import Field, Grid, atomic_write, cell_sum, integrate
from .profiles import compact_bump, gaussian
from .solver import assemble_flux, rhs_semidiscrete
from .specs import InternalEnergySpec, KernelSpec, ModelSpec

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class StationaryResult:
    density: Field
    lagrange_constants: List[Tuple[int, float]]
    residual_sup: float
    mass: float
    converged: bool
    off_support_gap: float = 0.0
    iterations: int = 0

    @property
    def is_minimiser_candidate(self) -> bool:
        """A single component (one constant C) with xi >= C off the support."""
        return len(self.lagrange_constants) == 1 and self.off_support_gap <= 1e-8


@dataclass(frozen=True)
class RegimeReport:
    m: float
    k: float
    d: int
    m_c: float
    zone: str
    regime: str
    bounded_below: str
    concentration_possible: bool


@dataclass(frozen=True)
class StabilityReport:
    chi: float
    leading_eigenvalue: float
    unstable_mode_index: Optional[int]


class InequalityCheck(NamedTuple):
    lhs: float
    rhs_without_constant: float
    ratio: float


# ---------------------------------------------------------------------------
# steady states


def support_components(rho: Field, support_threshold: float = None) -> Tuple[np.ndarray, int]:
    """
    Label the connected components of {rho > threshold} (grid adjacency, wrapping
    around periodic axes). Labels run 1..count; 0 marks cells off the support.
    """
    values = np.asarray(rho.values)
    threshold = 1e-12 * float(values.max()) if support_threshold is None else support_threshold
    labels, count = ndimage.label(values > threshold)
    if rho.grid.periodic and count > 1:
        parent = list(range(count + 1))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for axis in range(rho.grid.dims):
            first = np.take(labels, 0, axis=axis).ravel()
            last = np.take(labels, -1, axis=axis).ravel()
            for a, b in zip(first, last):
                if a and b:
                    parent[find(a)] = find(b)
        roots = sorted({find(i) for i in range(1, count + 1)})
        relabel = np.zeros(count + 1, dtype=int)
        for i in range(1, count + 1):
            relabel[i] = roots.index(find(i)) + 1
        labels = relabel[labels]
        count = len(roots)
    return labels, count


def euler_lagrange_residual(model: ModelSpec, rho: Field, support_threshold: float = None) -> StationaryResult:
    """Per-component constants C_i (rho-weighted means of xi) and the sup of |xi - C_i| on the support."""
    labels, count = support_components(rho, support_threshold)
    if count == 0:
        raise StationaryError("The density has empty support.")
    xi = assemble_flux(model, rho).xi
    values = np.asarray(rho.values)
    constants, residual = [], 0.0
    for component in range(1, count + 1):
        mask = labels == component
        weights = values[mask]
        c = cell_sum(weights * xi[mask]) / cell_sum(weights)
        constants.append((component, c))
        residual = max(residual, float(np.max(np.abs(xi[mask] - c))))
    off = labels == 0
    gap = 0.0
    if np.any(off):
        gap = max(0.0, min(c for _, c in constants) - float(xi[off].min()))
    return StationaryResult(rho, constants, residual, integrate(rho), True, gap)


def _mass_constant(internal: InternalEnergySpec, base: np.ndarray, target: float, vol: float) -> float:
    """The constant C for which max{0, (U')^-1(C - base)} carries `target` mass."""

    def excess(c):
        return cell_sum(u_prime_inverse(internal, c - base)) * vol - target

    lo, hi = float(base.min()) - 10.0, float(base.max()) + 10.0
    width = hi - lo
    for _ in range(200):
        if excess(lo) <= 0:
            break
        lo -= width
        width *= 2.0
        logger.debug("expanding lower bracket for C to %.6g", lo)
    else:
        raise StationaryError("Could not bracket the Lagrange constant from below.")
    for _ in range(200):
        if excess(hi) >= 0:
            break
        hi += width
        width *= 2.0
        logger.debug("expanding upper bracket for C to %.6g", hi)
    else:
        raise StationaryError("Could not bracket the Lagrange constant from above.")
    return brentq(excess, lo, hi, xtol=1e-14, rtol=4 * EPS, maxiter=500)


def boundary_mass(values: np.ndarray, vol: float) -> float:
    mask = np.zeros(values.shape, dtype=bool)
    for axis in range(values.ndim):
        index = [slice(None)] * values.ndim
        index[axis] = 0
        mask[tuple(index)] = True
        index[axis] = -1
        mask[tuple(index)] = True
    return cell_sum(values[mask]) * vol


def fixed_point_minimiser(model: ModelSpec, target_mass: float, initial: Field, theta: float = 0.5,
                          tol: float = 1e-10, max_iter: int = 100_000, whole_space: bool = False,
                          leak_tol: float = 1e-6) -> StationaryResult:
    """
    Damped fixed-point iteration for a minimiser of the given mass. With
    `whole_space=True` the grid stands for a truncation of R^d and a candidate
    whose mass reaches the box boundary is reported as NoMinimiserError.
    """
    if model.internal.variant == "none" or (model.internal.variant == "power" and model.internal.m <= 1):
        raise ModelError("fixed_point_minimiser needs linear diffusion or power diffusion with m > 1.")
    if not target_mass > 0 or max_iter < 1:
        raise StationaryError("target_mass and max_iter must be positive.")
    grid = initial.grid
    vol = grid.cell_volume
    potential = potential_field(model.potential, grid)
    rho = np.array(initial.values, dtype=float)
    previous_change = np.inf
    change = np.inf
    iteration = 0
    for iteration in range(1, max_iter + 1):
        base = potential + convolve_array(model.kernel, grid, rho, "fft")
        c = _mass_constant(model.internal, base, target_mass, vol)
        candidate = u_prime_inverse(model.internal, c - base)
        if whole_space and boundary_mass(candidate, vol) > leak_tol * target_mass:
            raise NoMinimiserError(
                "no normalizable minimiser: the mass of the candidate reaches the boundary of the box"
            )
        updated = (1.0 - theta) * rho + theta * candidate
        change = float(np.max(np.abs(updated - rho)))
        rho = updated
        if change <= tol:
            break
        if change > previous_change and theta > 1.0 / 1024:
            theta *= 0.5
            logger.warning("fixed-point iteration oscillates; damping reduced to theta=%.4g", theta)
        previous_change = change
    converged = change <= tol
    if not converged:
        logger.warning("fixed-point iteration stopped after %d iterations (change %.3e)", iteration, change)
    # the last image of the map carries the target mass and vanishes exactly off its support
    result = euler_lagrange_residual(model, Field(grid, candidate))
    return StationaryResult(result.density, result.lagrange_constants, result.residual_sup, result.mass,
                            converged, result.off_support_gap, iteration)


# ---------------------------------------------------------------------------
# linear stability of constant states


def chi_family(model: ModelSpec) -> Callable[[float], ModelSpec]:
    """chi -> the model with its kernel strength multiplied by chi."""

    def member(chi: float) -> ModelSpec:
        return model.with_kernel(model.kernel.scaled(chi))

    return member


def _mode_index(vector: np.ndarray, grid: Grid) -> int:
    spectrum = np.abs(np.fft.fftn(vector.reshape(grid.shape)))
    peak = np.unravel_index(int(np.argmax(spectrum)), grid.shape)
    waves = [min(p, n - p) for p, n in zip(peak, grid.shape)]
    return int(round(float(np.hypot(*waves)))) if len(waves) == 2 else int(waves[0])


def linearised_rhs(model: ModelSpec, state: Field, relative_step: float = 1e-7) -> np.ndarray:
    """Forward-difference Jacobian of rhs_semidiscrete at `state` (dense, size x size)."""
    grid = state.grid
    base = np.asarray(state.values, dtype=float).ravel()
    h = relative_step * max(float(base.mean()), EPS)
    f0 = rhs_semidiscrete(model, state).ravel()
    jacobian = np.empty((grid.size, grid.size))
    for j in range(grid.size):
        bumped = base.copy()
        bumped[j] += h
        jacobian[:, j] = (rhs_semidiscrete(model, Field(grid, bumped)).ravel() - f0) / h
    return jacobian


def stability_sweep(family: Union[ModelSpec, Callable[[float], ModelSpec]], constant_mass: float, grid: Grid,
                    chi_grid: Sequence[float], unstable_tol: float = 1e-8) -> List[StabilityReport]:
    """Leading eigenvalue of the linearised scheme at the constant state, one report per chi."""
    if not grid.periodic:
        raise StationaryError("stability_sweep needs a periodic grid.")
    member = chi_family(family) if isinstance(family, ModelSpec) else family
    state = Field(grid, np.full(grid.shape, constant_mass / grid.volume))
    reports = []
    for chi in chi_grid:
        jacobian = linearised_rhs(member(float(chi)), state)
        eigenvalues, vectors = linalg.eig(jacobian)
        lead = int(np.argmax(eigenvalues.real))
        leading = float(eigenvalues[lead].real)
        mode = _mode_index(vectors[:, lead], grid) if leading > unstable_tol else None
        reports.append(StabilityReport(float(chi), leading, mode))
        logger.info("chi=%.6g leading eigenvalue %.6e", chi, leading)
    return reports


def bifurcation_bracket(reports: Sequence[StabilityReport], tol: float = 1e-8) -> Optional[Tuple[float, float]]:
    """The first pair of consecutive chi values across which the leading eigenvalue turns positive."""
    for before, after in zip(reports, reports[1:]):
        if before.leading_eigenvalue <= tol < after.leading_eigenvalue:
            return before.chi, after.chi
    return None


def write_sweep_csv(path: str, reports: Sequence[StabilityReport]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["chi", "leading_eigenvalue", "unstable_mode_index"])
    for r in reports:
        mode = "" if r.unstable_mode_index is None else r.unstable_mode_index
        writer.writerow([repr(r.chi), repr(r.leading_eigenvalue), mode])
    atomic_write(path, buffer.getvalue().encode())


# ---------------------------------------------------------------------------
# homogeneous regimes


def classify_regime(m: float, k: float, d: int) -> RegimeReport:
    """
    Regimes of U = s^m/(m-1), W = chi|x|^k/k (k = 0 is the log kernel):
    m_c = 1 - k/d separates diffusion-dominated (m > m_c) from aggregation-dominated
    (m < m_c); m = m_c is fair competition.
    """
    if d not in (1, 2):
        raise ModelError(f"d must be 1 or 2, got {d}.")
    if not m > 0:
        raise ModelError(f"m must be positive, got {m}.")
    if not k > -d:
        raise ModelError(f"k must exceed -d = {-d}, got {k}.")
    m_c = 1.0 - k / d
    if abs(m - m_c) <= 1e-12 * max(1.0, abs(m_c)):
        regime = "fair_competition"
    elif m > m_c:
        regime = "diffusion_dominated"
    else:
        regime = "aggregation_dominated"

    threshold = d / (d + k)
    if m >= 1:
        zone = "III"
    elif k > 0 and threshold < m < 1:
        zone = "II"
    else:
        zone = "I"

    if k > 0 and m <= threshold:
        bounded = "no"
    elif regime == "fair_competition":
        bounded = "dichotomy_at_chi_c"
    elif regime == "diffusion_dominated":
        bounded = "yes"
    else:
        bounded = "no"

    concentration = zone == "II" and m < 2.0 * d / (2.0 * d + k)
    return RegimeReport(float(m), float(k), int(d), m_c, zone, regime, bounded, concentration)


# ---------------------------------------------------------------------------
# inequalities


def _lp_integral(f: Field, p: float) -> float:
    return cell_sum(np.asarray(f.values) ** p) * f.grid.cell_volume


def _power_double_integral(f: Field, k: float) -> float:
    """sum_i sum_j f_i w(x_i - x_j) f_j dV^2 with w the discrete |x|^k (log|x| for k = 0)."""
    kernel = KernelSpec.log(1.0) if k == 0 else KernelSpec.power(k, abs(k))
    conv = convolve(kernel, f)
    total = cell_sum(np.asarray(f.values) * conv) * f.grid.cell_volume
    return total if k >= 0 else -total


def check_hls_variant(f: Field, k: float, m: float) -> InequalityCheck:
    """
    |double integral of f |x-y|^k f| against ||f||_1^((d+k)/d) ||f||_m^m, valid
    for k in (-d, 0), m in (1, 2) and d(m-1) + k = 0.
    """
    d = f.grid.dims
    if not (-d < k < 0 and 1 < m < 2) or abs(d * (m - 1.0) + k) > 1e-12:
        raise ModelError(f"HLS variant needs k in (-d, 0), m in (1, 2) and d(m-1)+k = 0; got m={m}, k={k}.")
    lhs = abs(_power_double_integral(f, k))
    rhs = integrate(f) ** ((d + k) / d) * _lp_integral(f, m)
    return InequalityCheck(lhs, rhs, lhs / rhs if rhs > 0 else 0.0)


def rhls_exponent(k: float, m: float, d: int) -> float:
    """alpha making both sides scale alike under f -> lambda^d f(lambda x): 2 - k m / (d (1 - m))."""
    return 2.0 - k * m / (d * (1.0 - m))


def check_rhls(f: Field, k: float, m: float) -> InequalityCheck:
    """
    Double integral of f |x-y|^k f against (int f)^alpha (int f^m)^((2-alpha)/m), for
    k > 0 and d/(d+k) < m < 1.
    """
    d = f.grid.dims
    if not (k > 0 and d / (d + k) < m < 1):
        raise ModelError(f"Reversed HLS needs k > 0 and d/(d+k) < m < 1; got m={m}, k={k}.")
    alpha = rhls_exponent(k, m, d)
    lhs = _power_double_integral(f, k)
    mass = integrate(f)
    rhs = mass**alpha * _lp_integral(f, m) ** ((2.0 - alpha) / m) if mass > 0 else 0.0
    return InequalityCheck(lhs, rhs, lhs / rhs if rhs > 0 else 0.0)


def quadratic_interaction_moments(f: Field) -> float:
    """2 M0 M2 - 2 |M1|^2, which equals the k = 2 double integral of f |x-y|^2 f."""
    vol = f.grid.cell_volume
    values = np.asarray(f.values)
    coords = f.grid.coordinates()
    m0 = cell_sum(values) * vol
    m1 = np.array([cell_sum(values * x) * vol for x in coords])
    m2 = cell_sum(values * sum(x**2 for x in coords)) * vol
    return 2.0 * m0 * m2 - 2.0 * float(m1 @ m1)


def inequality_family(grid: Grid, size: int = 12, seed: int = 0, scale: float = None) -> List[Field]:
    """
    Unit-mass test densities: single Gaussians of several widths, random mixtures
    of two and three Gaussians and Barenblatt-shaped compact bumps.
    """
    rng = np.random.default_rng(seed)
    span = min(grid.lengths)
    scale = span / 8.0 if scale is None else scale
    members = [gaussian(grid, 0.0, w * scale) for w in (0.5, 1.0, 2.0)]
    members += [compact_bump(grid, r * scale, q) for r, q in ((2.0, 1.0), (2.5, 2.0), (3.0, 0.5))]
    while len(members) < size:
        count = int(rng.integers(2, 4))
        fields = []
        for _ in range(count):
            center = rng.uniform(-1.0, 1.0, size=grid.dims) * scale
            fields.append(np.asarray(gaussian(grid, center, rng.uniform(0.4, 1.2) * scale, 1.0).values))
        weights = rng.dirichlet(np.ones(count))
        members.append(Field(grid, sum(w * v for w, v in zip(weights, fields))))
    return members[:size]


def hls_constant_estimate(family: Sequence[Field], k: float, m: float) -> float:
    """Supremum of the HLS-variant ratio over the family (a lower estimate of the sharp constant)."""
    return max(check_hls_variant(f, k, m).ratio for f in family)


def rhls_constant_estimate(family: Sequence[Field], k: float, m: float) -> float:
    """Infimum of the reversed-HLS ratio over the family (an upper estimate of the sharp constant)."""
    return min(check_rhls(f, k, m).ratio for f in family)


def estimate_chi_c(m: float, k: float, d: int, family: Sequence[Field]) -> float:
    """
    Largest chi with F >= 0 on every unit-mass member of the family for
    U = s^m/(m-1), W = chi|x|^k/k in fair competition: the minimum over members of
    internal / (-interaction at chi = 1). The ratio carries no extra factor m; F is
    affine in chi, so this is exactly where F changes sign on each member.
    """
    if not (m > 1 and -d < k < 0 and abs(k - (1.0 - m) * d) <= 1e-12):
        raise ModelError(f"estimate_chi_c needs fair competition k = (1-m)d with m > 1; got m={m}, k={k}, d={d}.")
    if not family:
        raise StationaryError("estimate_chi_c needs a non-empty family.")
    kernel = KernelSpec.power(k, 1.0)
    ratios = []
    for f in family:
        if f.grid.dims != d:
            raise ModelError("Family members must live on a grid of dimension d.")
        unit = Field(f.grid, np.asarray(f.values) / integrate(f))
        internal = _lp_integral(unit, m) / (m - 1.0)
        interaction = 0.5 * cell_sum(np.asarray(unit.values) * convolve(kernel, unit)) * unit.grid.cell_volume
        if interaction >= 0:
            raise StationaryError("Interaction energy is not negative; check the kernel exponent.")
        ratios.append(internal / -interaction)
    return float(min(ratios))


# ---------------------------------------------------------------------------
# diagnostics


def _cell_at(grid: Grid, center) -> Tuple[int, ...]:
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dims,))
    return tuple(
        int(np.clip(np.floor((ci - lo) / h), 0, n - 1))
        for ci, (lo, _), h, n in zip(c, grid.bounds, grid.dx, grid.cells)
    )


def concentration_indicator(results_at_refinements: Sequence[Union[Field, StationaryResult]], center=None,
                            concentrating_below: float = 0.5, integrable_above: float = 0.75) -> str:
    """
    Fit the exponent of the mass in the cell containing `center` (default: the middle
    of the domain) against dx over successive refinements, normalised by d:
    integrable densities give ~1, a Dirac mass at the center gives ~0.
    """
    fields = [r.density if isinstance(r, StationaryResult) else r for r in results_at_refinements]
    if len(fields) < 3:
        raise StationaryError("concentration_indicator needs at least 3 refinements.")
    dx = np.array([f.grid.dx[0] for f in fields])
    masses = []
    for f in fields:
        point = center if center is not None else [0.5 * (lo + hi) for lo, hi in f.grid.bounds]
        masses.append(float(np.asarray(f.values)[_cell_at(f.grid, point)]) * f.grid.cell_volume)
    masses = np.array(masses)
    if np.any(masses <= 0):
        raise StationaryError("Every refinement needs positive mass in the center cell.")
    slope = np.polyfit(np.log(dx), np.log(masses), 1)[0] / fields[0].grid.dims
    logger.debug("center-cell mass exponent %.4f", slope)
    if slope < concentrating_below:
        return "concentrating"
    if slope > integrable_above:
        return "integrable"
    return "undecided"


def radial_monotonicity_check(rho: Field, center=0.0, tol: float = 1e-8) -> bool:
    """True iff the cell values, ordered by distance to `center`, never increase beyond tol * max."""
    values = np.asarray(rho.values).ravel()
    c = np.broadcast_to(np.asarray(center, dtype=float), (rho.grid.dims,))
    dist = np.sqrt(sum((x - ci) ** 2 for x, ci in zip(rho.grid.coordinates(), c))).ravel()
    order = np.lexsort((-values, dist))
    steps = np.diff(values[order])
    return bool(np.all(steps <= tol * float(values.max(initial=0.0))))

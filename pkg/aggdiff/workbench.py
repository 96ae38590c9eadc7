"""Experiment drivers behind the command line."""

import contextlib
import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .config import RunConfig
from .exceptions import ConfigError, SolverError, TransportError
from .energetics import free_energy
from .mesh import NO_FLUX, Field, atomic_write, integrate, write_field
from .solver import StepReport, adaptive_dt, step_explicit, step_implicit, system_step
from .stationary import (
    StationaryResult,
    bifurcation_bracket,
    boundary_mass,
    fixed_point_minimiser,
    stability_sweep,
    support_components,
    write_sweep_csv,
)
from .transport import (
    compare_jko,
    empirical_density,
    from_quantiles,
    geodesic_1d,
    meanfield_gap,
    sample_ensemble,
    simulate_particles,
    to_quantiles,
    write_trajectory_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 3

BOX_LEAK_FRACTION = 1e-6

ENERGY_FIELDS = ["min_density", "E_internal", "E_potential", "E_interaction", "E_total", "dissipation_bound",
                 "energy_drop", "picard_iters"]


def series_header(species: int) -> List[str]:
    return ["step", "t"] + [f"mass_{a + 1}" for a in range(species)] + ENERGY_FIELDS


@dataclass
class RunResult:
    status: int
    steps: int
    t: float
    reason: str
    directory: str
    rows: List[list] = field(default_factory=list)
    final: List[Field] = field(default_factory=list)


def _row(step: int, report: StepReport) -> list:
    e = report.energy
    return ([step, repr(report.t)] + [repr(m) for m in report.mass_per_species]
            + [repr(report.min_density), repr(e.internal), repr(e.potential), repr(e.interaction), repr(e.total),
               repr(report.dissipation_bound), repr(report.energy_drop), report.picard_iters])


def _initial_report(config: RunConfig) -> StepReport:
    fields = list(config.initial)
    return StepReport(
        t=0.0,
        dt_used=0.0,
        mass_per_species=tuple(integrate(f) for f in fields),
        min_density=min(f.min for f in fields),
        energy=free_energy(config.dynamics, config.state),
        dissipation_bound=0.0,
        energy_drop=0.0,
        picard_iters=0,
        monotone=True,
        gradient_flow=config.system.is_symmetric,
    )


class Simulation:
    """Time-stepping state of one run; created by simulation_session."""

    def __init__(self, config: RunConfig, directory: str):
        self.config = config
        self.directory = directory
        self.state = config.state
        self.t = 0.0
        self.step = 0
        self.status = EXIT_OK
        self.reason = "running"
        self.rows = [_row(0, _initial_report(config))]
        self.reports: List[StepReport] = []
        self._leak_reported = False
        self._write_snapshot()

    @property
    def fields(self) -> List[Field]:
        return [self.state] if isinstance(self.state, Field) else list(self.state)

    def _write_snapshot(self) -> None:
        for a, f in enumerate(self.fields):
            name = f"snap_{self.step:06d}.adfv" if self.config.single else f"snap_s{a + 1}_{self.step:06d}.adfv"
            write_field(os.path.join(self.directory, name), f)
        logger.info("snapshot written at step %d (t=%.6g)", self.step, self.t)

    def _next_dt(self) -> float:
        time = self.config.time
        solver = time.solver
        dt = solver.dt
        if time.adaptive:
            dt = adaptive_dt(self.config.dynamics, self.state, solver.cfl, solver.time_integrator,
                             solver.implicit_relax, solver.dt_max)
        return min(dt, time.t_end - self.t)

    def advance(self) -> StepReport:
        """One time step; raises SolverError when the step cannot be completed."""
        solver = self.config.time.solver
        dt = self._next_dt()
        if solver.time_integrator == "explicit_rk":
            self.state, report = step_explicit(self.config.dynamics, self.state, dt, solver, self.t)
        elif self.config.single:
            self.state, report = step_implicit(self.config.model, self.state, dt, solver, self.t)
        else:
            self.state, report = system_step(self.config.system, self.state, dt, solver, self.t)
        self.step += 1
        self.t = report.t
        self.reports.append(report)
        output = self.config.output
        if self.step % output.series_stride == 0:
            self.rows.append(_row(self.step, report))
        if output.snapshot_stride and self.step % output.snapshot_stride == 0:
            self._write_snapshot()
        self._check_box()
        return report

    def _check_box(self) -> None:
        grid = self.config.grid
        if self._leak_reported or grid.boundary != NO_FLUX:
            return
        for f in self.fields:
            mass = integrate(f)
            if mass > 0 and boundary_mass(f.values, grid.cell_volume) > BOX_LEAK_FRACTION * mass:
                logger.warning("mass reached the boundary of the box at t=%.6g; enlarge the domain "
                               "if the problem is posed on the whole space", self.t)
                self._leak_reported = True
                return

    def done(self) -> bool:
        return self.t >= self.config.time.t_end - 1e-12 * max(1.0, self.config.time.t_end)

    def run_to_end(self) -> int:
        """Step until t_end, a failed dissipation check, a solver failure or the max_density stop."""
        max_density = self.config.time.max_density
        while not self.done():
            try:
                report = self.advance()
            except SolverError as ex:
                logger.error("solver failure at t=%.6g: %s", self.t, ex)
                self.status, self.reason = EXIT_SOLVER, f"solver failure: {ex}"
                return self.status
            if report.gradient_flow and not report.monotone:
                logger.error("free energy increased beyond the dissipation bound at t=%.6g", report.t)
                self.status, self.reason = EXIT_SOLVER, "dissipation check failed"
                return self.status
            if max_density is not None and max(f.max for f in self.fields) > max_density:
                logger.info("max density above %.3g at t=%.6g; stopping", max_density, self.t)
                self.reason = "max_density reached"
                return self.status
        self.reason = "t_end reached"
        return self.status

    def close(self) -> None:
        output = self.config.output
        if self.step % output.series_stride != 0 and self.reports:
            self.rows.append(_row(self.step, self.reports[-1]))
        if not output.snapshot_stride or self.step % output.snapshot_stride != 0:
            self._write_snapshot()
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(series_header(self.config.system.size))
        writer.writerows(self.rows)
        atomic_write(os.path.join(self.directory, "series.csv"), buffer.getvalue().encode())
        grid = self.config.grid
        summary = {
            "tag": self.config.output.tag,
            "status": self.status,
            "reason": self.reason,
            "steps": self.step,
            "t": self.t,
            "species": self.config.system.size,
            "box": {"dims": grid.dims, "cells": list(grid.cells), "bounds": [list(b) for b in grid.bounds],
                    "boundary": grid.boundary},
            "masses": [integrate(f) for f in self.fields],
        }
        write_json(os.path.join(self.directory, "summary.json"), summary)
        logger.info("run '%s' finished: %s after %d steps (t=%.6g)", summary["tag"], self.reason, self.step, self.t)


@contextlib.contextmanager
def simulation_session(config: RunConfig, directory: str = None) -> Iterator[Simulation]:
    """
    Yields a Simulation writing into `directory` (default: the configured output
    directory). Series and summary are written when the block exits, also after errors.
    """
    directory = directory or config.output.directory
    os.makedirs(directory, exist_ok=True)
    logger.info("run '%s' starting in %s", config.output.tag, directory)
    sim = Simulation(config, directory)
    try:
        yield sim
    except SolverError as ex:
        sim.status, sim.reason = EXIT_SOLVER, f"solver failure: {ex}"
        raise
    finally:
        sim.close()


def run(config: RunConfig, directory: str = None) -> RunResult:
    with simulation_session(config, directory) as sim:
        status = sim.run_to_end()
    return RunResult(status, sim.step, sim.t, sim.reason, sim.directory, sim.rows, sim.fields)


def write_json(path: str, payload: dict) -> None:
    atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


# ---------------------------------------------------------------------------
# diagnostics


def bump_census(rho: Field, threshold: float = 0.01) -> int:
    """Number of connected components of {rho > threshold * max rho}."""
    if rho.grid.dims != 1:
        raise ConfigError("bump_census works on 1D fields.")
    peak = rho.max
    if not peak > 0:
        return 0
    return support_components(rho, threshold * peak)[1]


@dataclass(frozen=True)
class Plateau:
    start: float
    end: float
    slope: float


def energy_plateaus(times: Sequence[float], energies: Sequence[float], window: float = 1.0,
                    threshold: float = 1e-6) -> List[Plateau]:
    """
    Maximal time intervals of length >= window on which the energy changes by less
    than `threshold` per unit time, relative to the largest |E| of the series.
    `slope` is the largest relative rate inside the plateau.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    if t.size != e.size:
        raise ValueError("times and energies differ in length.")
    if t.size < 2:
        return []
    scale = max(float(np.max(np.abs(e))), np.finfo(float).tiny)
    rates = np.abs(np.diff(e)) / (np.diff(t) * scale)
    quiet = rates < threshold
    plateaus = []
    i = 0
    while i < quiet.size:
        if not quiet[i]:
            i += 1
            continue
        j = i
        while j + 1 < quiet.size and quiet[j + 1]:
            j += 1
        if t[j + 1] - t[i] >= window:
            plateaus.append(Plateau(float(t[i]), float(t[j + 1]), float(rates[i:j + 1].max())))
        i = j + 1
    return plateaus


def read_series(path: str) -> Tuple[List[str], np.ndarray]:
    with open(path, "r", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows or len(rows) < 2:
        return (rows[0] if rows else []), np.empty((0, 0))
    return rows[0], np.array([[float(v) for v in row] for row in rows[1:]])


# ---------------------------------------------------------------------------
# drivers


def run_steady(config: RunConfig, directory: str = None) -> StationaryResult:
    directory = directory or config.output.directory
    settings = config.steady
    initial = config.initial[0]
    mass = settings.mass if settings.mass is not None else integrate(initial)
    result = fixed_point_minimiser(config.model, mass, initial, settings.theta, settings.tol, settings.max_iter,
                                   settings.whole_space, settings.leak_tol)
    write_field(os.path.join(directory, "steady.adfv"), result.density)
    write_json(os.path.join(directory, "steady.json"), {
        "converged": result.converged,
        "iterations": result.iterations,
        "mass": result.mass,
        "residual_sup": result.residual_sup,
        "off_support_gap": result.off_support_gap,
        "lagrange_constants": [[i, c] for i, c in result.lagrange_constants],
    })
    return result


def run_sweep(config: RunConfig, directory: str = None, start: float = None, stop: float = None,
              steps: int = None):
    directory = directory or config.output.directory
    settings = config.sweep
    start = settings.start if start is None else start
    stop = settings.stop if stop is None else stop
    steps = settings.steps if steps is None else steps
    mass = settings.mass if settings.mass is not None else integrate(config.initial[0])
    reports = stability_sweep(config.model, mass, config.grid, np.linspace(start, stop, steps))
    write_sweep_csv(os.path.join(directory, "sweep.csv"), reports)
    bracket = bifurcation_bracket(reports)
    if bracket is not None:
        logger.info("leading eigenvalue turns positive between chi=%.6g and chi=%.6g", *bracket)
    return reports, bracket


def run_particles(config: RunConfig, directory: str = None):
    directory = directory or config.output.directory
    p = config.particles
    ensemble = sample_ensemble(config.initial, p.n, p.seed, p.cutoff)
    trajectory = simulate_particles(ensemble, config.system, p.dt, p.steps, p.seed, p.record_every)
    write_trajectory_csv(os.path.join(directory, "trajectory.csv"), trajectory, p.dt)
    for a, rho in enumerate(empirical_density(trajectory[-1], config.grid)):
        write_field(os.path.join(directory, f"particles_s{a + 1}.adfv"), rho)
    gaps = []
    if p.sizes and config.grid.dims == 1:
        gaps = meanfield_gap(config.system, config.initial, p.sizes, p.steps * p.dt, p.dt, p.seed,
                             config.time.solver)
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["n"] + [f"w2_{a + 1}" for a in range(config.system.size)])
        for gap in gaps:
            writer.writerow([gap.n] + [repr(e) for e in gap.errors])
        atomic_write(os.path.join(directory, "meanfield.csv"), buffer.getvalue().encode())
    return trajectory, gaps


def run_compare_jko(config: RunConfig, directory: str = None) -> float:
    directory = directory or config.output.directory
    j = config.jko
    gap, jko, fv = compare_jko(config.model, config.initial[0], j.t_end, j.dt, config.time.solver, j.quantiles)
    write_field(os.path.join(directory, "jko_final.adfv"), from_quantiles(jko, config.grid))
    write_field(os.path.join(directory, "fv_final.adfv"), fv)
    write_json(os.path.join(directory, "jko.json"), {"t_end": j.t_end, "dt": j.dt, "w2_gap": gap})
    return gap


def run_geodesic(config_a: RunConfig, config_b: RunConfig, frames: int, directory: str,
                 M: int = None) -> List[Field]:
    """Frames of the displacement interpolation between the initial data of two 1D configurations."""
    if frames < 2:
        raise TransportError("A geodesic needs at least 2 frames.")
    grid = config_a.grid
    if config_b.grid != grid:
        raise TransportError("Both configurations must use the same grid.")
    M = M or config_a.jko.quantiles
    a = to_quantiles(config_a.initial[0], M)
    b = to_quantiles(config_b.initial[0], M)
    out = []
    for i in range(frames):
        frame = from_quantiles(geodesic_1d(a, b, i / (frames - 1)), grid)
        write_field(os.path.join(directory, f"frame_{i:04d}.adfv"), frame)
        out.append(frame)
    return out

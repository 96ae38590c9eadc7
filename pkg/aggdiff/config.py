"""
Run configuration: INI files and the named presets.

Sections are [grid], [model], [species.N], [coupling], [time], [output] and one per
driver. Every semantic error is reported with the line of the offending key.
"""

import configparser
import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .exceptions import AggDiffError, ConfigError
from .mesh import Field, Grid, build_grid, integrate, read_field
from .profiles import barenblatt, bumps, compact_bump, gaussian, heat_periodic_exact, two_population_discs, uniform
from .solver import SolverConfig
from .specs import (
    InternalEnergySpec,
    KernelSpec,
    MobilitySpec,
    ModelSpec,
    PotentialSpec,
    SpeciesSpec,
    SystemSpec,
)

_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^\s=:#;\[][^=:]*?)\s*[=:]")
_COUPLING_KEY = re.compile(r"^w(\d+)_?(\d+)$")

_FIXED_SECTIONS = ("grid", "model", "coupling", "time", "output", "steady", "sweep", "particles", "jko")


@dataclass(frozen=True)
class TimeSettings:
    t_end: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    adaptive: bool = False
    max_density: Optional[float] = None


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    tag: str = "run"
    snapshot_stride: int = 10
    series_stride: int = 1
    plateau_window: float = 1.0
    plateau_threshold: float = 1e-6
    bump_threshold: float = 0.01


@dataclass(frozen=True)
class SteadySettings:
    theta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 100_000
    whole_space: bool = False
    leak_tol: float = 1e-6
    support_threshold: Optional[float] = None
    mass: Optional[float] = None


@dataclass(frozen=True)
class SweepSettings:
    param: str = "chi"
    start: float = 0.0
    stop: float = 1.0
    steps: int = 11
    mass: Optional[float] = None


@dataclass(frozen=True)
class ParticleSettings:
    n: int = 1000
    dt: float = 1e-2
    steps: int = 100
    seed: int = 0
    cutoff: float = float("inf")
    record_every: int = 10
    sizes: Tuple[int, ...] = ()


@dataclass(frozen=True)
class JkoSettings:
    dt: float = 1e-2
    t_end: float = 0.5
    quantiles: int = 256


@dataclass(frozen=True, eq=False)
class RunConfig:
    grid: Grid
    system: SystemSpec
    initial: Tuple[Field, ...]
    single: bool = True
    time: TimeSettings = field(default_factory=TimeSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    steady: SteadySettings = field(default_factory=SteadySettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    particles: ParticleSettings = field(default_factory=ParticleSettings)
    jko: JkoSettings = field(default_factory=JkoSettings)

    @property
    def model(self) -> ModelSpec:
        """The single-species model; systems raise ConfigError."""
        if not self.single:
            raise ConfigError("This configuration describes a system, not a single model.")
        return self.system.species_model(0)

    @property
    def dynamics(self):
        return self.model if self.single else self.system

    @property
    def state(self):
        return self.initial[0] if self.single else list(self.initial)


class _Reader:
    """configparser sections plus the line on which every key was written."""

    def __init__(self, text: str):
        self.parser = configparser.ConfigParser(
            inline_comment_prefixes=("#",), comment_prefixes=("#", ";"), interpolation=None
        )
        try:
            self.parser.read_string(text)
        except configparser.DuplicateOptionError as ex:
            raise ConfigError(f"duplicate key '{ex.option}' in [{ex.section}]", ex.lineno)
        except configparser.DuplicateSectionError as ex:
            raise ConfigError(f"duplicate section [{ex.section}]", ex.lineno)
        except configparser.MissingSectionHeaderError as ex:
            raise ConfigError("key outside of any section", ex.lineno)
        except configparser.ParsingError as ex:
            lineno = ex.errors[0][0] if ex.errors else None
            raise ConfigError("cannot parse line", lineno)
        self.lines: Dict[Tuple[str, str], int] = {}
        self.section_lines: Dict[str, int] = {}
        section = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped[0] in "#;":
                continue
            header = _SECTION.match(line)
            if header:
                section = header.group(1).strip()
                self.section_lines[section] = lineno
                continue
            key = _KEY.match(line)
            if key and section is not None and not line[:1].isspace():
                self.lines[(section, key.group(1).strip().lower())] = lineno
        self.used: Dict[str, set] = {}

    def has(self, section: str) -> bool:
        return self.parser.has_section(section)

    def keys(self, section: str) -> List[str]:
        return list(self.parser[section].keys()) if self.has(section) else []

    def line(self, section: str, key: str = None) -> Optional[int]:
        if key is None:
            return self.section_lines.get(section)
        return self.lines.get((section, key), self.section_lines.get(section))

    def raw(self, section: str, key: str, default=None):
        self.used.setdefault(section, set()).add(key)
        if not self.has(section) or key not in self.parser[section]:
            return default
        return self.parser[section][key].strip()

    def required(self, section: str, key: str) -> str:
        value = self.raw(section, key)
        if value is None or value == "":
            raise ConfigError(f"[{section}] needs a value for '{key}'", self.line(section))
        return value

    def number(self, section: str, key: str, default=None, kind=float):
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return kind(value)
        except ValueError:
            raise ConfigError(f"'{key}' must be a number, got '{value}'", self.line(section, key))

    def flag(self, section: str, key: str, default: bool) -> bool:
        value = self.raw(section, key)
        if value is None:
            return default
        lowered = value.lower()
        if lowered in ("1", "yes", "true", "on"):
            return True
        if lowered in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"'{key}' must be a boolean, got '{value}'", self.line(section, key))

    def vector(self, section: str, key: str, default=None) -> Optional[List[float]]:
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return [float(v) for v in re.split(r"[,\s]+", value) if v]
        except ValueError:
            raise ConfigError(f"'{key}' must be a list of numbers, got '{value}'", self.line(section, key))

    def points(self, section: str, key: str) -> Optional[List[List[float]]]:
        """`a, b; c, d` style lists (one point per `;`)."""
        value = self.raw(section, key)
        if value is None:
            return None
        try:
            return [[float(v) for v in re.split(r"[,\s]+", part.strip()) if v] for part in value.split(";")]
        except ValueError:
            raise ConfigError(f"'{key}' must be a list of points, got '{value}'", self.line(section, key))

    def check_unused(self, section: str) -> None:
        for key in self.keys(section):
            if key not in self.used.get(section, set()):
                raise ConfigError(f"unknown key '{key}' in [{section}]", self.line(section, key))


def _guard(reader: _Reader, section: str, key: str, build):
    """Run a spec constructor and re-raise its error on the line of `key`."""
    try:
        return build()
    except ConfigError:
        raise
    except AggDiffError as ex:
        raise ConfigError(str(ex), reader.line(section, key))
    except (TypeError, ValueError):
        raise ConfigError(f"missing or invalid parameters for '{key}'", reader.line(section, key))


def _parse_grid(reader: _Reader) -> Grid:
    if not reader.has("grid"):
        raise ConfigError("missing [grid] section")
    dims = reader.number("grid", "dims", 1, int)
    cells = [int(c) for c in reader.vector("grid", "cells", [128])]
    bounds = reader.points("grid", "bounds") or [[0.0, 1.0]]
    boundary = reader.raw("grid", "boundary", "no-flux")
    reader.check_unused("grid")
    if any(len(b) != 2 for b in bounds):
        raise ConfigError("bounds must be pairs 'lo, hi' separated by ';'", reader.line("grid", "bounds"))
    cells_arg = cells[0] if len(cells) == 1 else cells
    bounds_arg = bounds[0] if len(bounds) == 1 else bounds
    return _guard(reader, "grid", "dims", lambda: build_grid(dims, cells_arg, bounds_arg, boundary))


def _parse_internal(reader: _Reader, section: str) -> InternalEnergySpec:
    variant = reader.raw(section, "internal", "none")
    if variant == "power":
        m = reader.number(section, "internal.m")
        return _guard(reader, section, "internal", lambda: InternalEnergySpec.power(m))
    return _guard(reader, section, "internal", lambda: InternalEnergySpec(variant))


def _parse_potential(reader: _Reader, section: str, grid: Grid) -> PotentialSpec:
    variant = reader.raw(section, "potential", "zero")
    if variant == "power":
        p = reader.number(section, "potential.p")
        strength = reader.number(section, "potential.strength", 1.0)
        return _guard(reader, section, "potential", lambda: PotentialSpec.power(p, strength))
    if variant == "double_well":
        a = reader.number(section, "potential.a")
        b = reader.number(section, "potential.b")
        return _guard(reader, section, "potential", lambda: PotentialSpec.double_well(a, b))
    if variant == "custom_table":
        path = reader.required(section, "potential.path")
        offset = reader.number(section, "potential.offset", 0.0)

        def build():
            try:
                table = read_field(path)
            except OSError as ex:
                raise ConfigError(f"cannot read potential table '{path}': {ex}", reader.line(section, "potential.path"))
            if table.grid != grid:
                raise ConfigError("potential table lives on a different grid", reader.line(section, "potential.path"))
            return PotentialSpec.custom_table(table, offset)

        return _guard(reader, section, "potential.path", build)
    return _guard(reader, section, "potential", lambda: PotentialSpec(variant))


def _parse_kernel(reader: _Reader, section: str, key: str, grid: Grid, internal: InternalEnergySpec = None) -> KernelSpec:
    variant = reader.raw(section, key, "zero")

    def param(name, default=None):
        return reader.number(section, f"{key}.{name}", default)

    if variant == "power":
        k = param("k")
        chi = param("chi", 1.0)
        factor = param("chi_c_factor")
        if factor is not None:
            chi = factor * _fair_competition_chi_c(reader, section, key, grid, internal, k)
        kernel = _guard(reader, section, key, lambda: KernelSpec.power(k, chi))
    elif variant == "log":
        kernel = _guard(reader, section, key, lambda: KernelSpec.log(param("chi", 1.0)))
    elif variant == "exponential":
        kernel = _guard(reader, section, key, lambda: KernelSpec.exponential(param("amplitude", 1.0), param("length")))
    elif variant == "gaussian":
        kernel = _guard(reader, section, key, lambda: KernelSpec.gaussian(param("amplitude", 1.0), param("width")))
    elif variant == "characteristic":
        kernel = _guard(reader, section, key, lambda: KernelSpec.characteristic(param("radius"), param("depth", 1.0)))
    else:
        kernel = _guard(reader, section, key, lambda: KernelSpec(variant))
    _guard(reader, section, key, lambda: kernel.check_dimension(grid.dims))
    return kernel


def _fair_competition_chi_c(reader: _Reader, section: str, key: str, grid: Grid, internal, k) -> float:
    from .stationary import estimate_chi_c, inequality_family

    if internal is None or internal.variant != "power" or k is None:
        raise ConfigError("chi_c_factor needs a power kernel and power diffusion", reader.line(section, key))
    return _guard(
        reader, section, f"{key}.chi_c_factor",
        lambda: estimate_chi_c(internal.m, k, grid.dims, inequality_family(grid)),
    )


def _parse_mobility(reader: _Reader, section: str) -> MobilitySpec:
    variant = reader.raw(section, "mobility", "linear")
    if variant == "saturating":
        rho_max = reader.number(section, "mobility.rho_max")
        return _guard(reader, section, "mobility", lambda: MobilitySpec.saturating(rho_max))
    return _guard(reader, section, "mobility", lambda: MobilitySpec(variant))


def _parse_initial(reader: _Reader, section: str, grid: Grid, internal: InternalEnergySpec) -> Field:
    variant = reader.raw(section, "initial", "uniform")
    dims = grid.dims

    def param(name, default=None):
        return reader.number(section, f"initial.{name}", default)

    def center(name="center"):
        values = reader.vector(section, f"initial.{name}", [0.0] * dims)
        if len(values) not in (1, dims):
            raise ConfigError(f"initial.{name} needs {dims} coordinates", reader.line(section, f"initial.{name}"))
        return values[0] if len(values) == 1 else values

    def build():
        if variant == "uniform":
            return uniform(grid, param("mass"), param("value", 1.0))
        if variant == "gaussian":
            return gaussian(grid, center(), param("width", 1.0), param("mass", 1.0))
        if variant == "bumps":
            centers = reader.points(section, "initial.centers")
            if not centers:
                raise ConfigError("bumps need initial.centers", reader.line(section, "initial"))
            if dims == 1 and len(centers) == 1:
                centers = [[c] for c in centers[0]]
            count = len(centers)
            widths = reader.vector(section, "initial.widths", [1.0])
            masses = reader.vector(section, "initial.masses", [1.0])
            widths = widths * count if len(widths) == 1 else widths
            masses = masses * count if len(masses) == 1 else masses
            return bumps(grid, [c if dims > 1 else c[0] for c in centers], widths, masses, param("background", 0.0))
        if variant == "compact_bump":
            return compact_bump(grid, param("radius", 1.0), param("exponent", 1.0), center(), param("mass", 1.0))
        if variant == "barenblatt":
            m = param("m", internal.m if internal.variant == "power" else None)
            return barenblatt(grid, m, param("t0", 1.0), param("mass", 1.0), center())
        if variant == "heat":
            return heat_periodic_exact(grid, param("t0", 0.0), param("amplitude", 0.5))
        if variant == "disc":
            seed = int(param("seed", 0))
            edge = param("edge")
            return two_population_discs(grid, param("radius", 1.0), (param("mass", 1.0),), param("noise", 0.2),
                                        seed, edge)[0]
        if variant == "file":
            path = reader.required(section, "initial.path")
            try:
                loaded = read_field(path)
            except OSError as ex:
                raise ConfigError(f"cannot read initial field '{path}': {ex}", reader.line(section, "initial.path"))
            if loaded.grid != grid:
                raise ConfigError("initial field lives on a different grid", reader.line(section, "initial.path"))
            return loaded
        raise ConfigError(f"unknown initial datum '{variant}'", reader.line(section, "initial"))

    return _guard(reader, section, "initial", build)


def _species_sections(reader: _Reader) -> List[str]:
    found = []
    for section in reader.parser.sections():
        if section.startswith("species."):
            suffix = section.split(".", 1)[1]
            if not suffix.isdigit():
                raise ConfigError(f"species sections are numbered, got [{section}]", reader.line(section))
            found.append((int(suffix), section))
        elif section not in _FIXED_SECTIONS:
            raise ConfigError(f"unknown section [{section}]", reader.line(section))
    found.sort()
    if [n for n, _ in found] != list(range(1, len(found) + 1)):
        raise ConfigError("species sections must be numbered 1, 2, ... without gaps")
    return [s for _, s in found]


def _parse_dynamics(reader: _Reader, grid: Grid):
    species_sections = _species_sections(reader)
    if reader.has("model") and species_sections:
        raise ConfigError("use either [model] or [species.N] sections, not both", reader.line("model"))
    if reader.has("model"):
        internal = _parse_internal(reader, "model")
        potential = _parse_potential(reader, "model", grid)
        kernel = _parse_kernel(reader, "model", "kernel", grid, internal)
        mobility = _parse_mobility(reader, "model")
        initial = _parse_initial(reader, "model", grid, internal)
        reader.check_unused("model")
        model = ModelSpec(internal, potential, kernel, mobility)
        return model.as_system(integrate(initial)), (initial,), True
    if not species_sections:
        raise ConfigError("missing [model] or [species.N] sections")
    species, initial = [], []
    for section in species_sections:
        internal = _parse_internal(reader, section)
        species.append(SpeciesSpec(internal, _parse_potential(reader, section, grid), _parse_mobility(reader, section)))
        initial.append(_parse_initial(reader, section, grid, internal))
        reader.check_unused(section)
    n = len(species)
    coupling = [[KernelSpec.zero() for _ in range(n)] for _ in range(n)]
    for key in reader.keys("coupling"):
        match = _COUPLING_KEY.match(key)
        if not match:
            continue
        a, b = int(match.group(1)), int(match.group(2))
        if not (1 <= a <= n and 1 <= b <= n):
            raise ConfigError(f"coupling '{key}' refers to a missing species", reader.line("coupling", key))
        coupling[a - 1][b - 1] = _parse_kernel(reader, "coupling", key, grid)
    epsilon = reader.number("coupling", "epsilon", 0.0)
    reader.check_unused("coupling")
    masses = tuple(integrate(f) for f in initial)
    system = _guard(reader, "coupling", "epsilon", lambda: SystemSpec(tuple(species), coupling, epsilon, masses))
    return system, tuple(initial), False


def _parse_time(reader: _Reader) -> TimeSettings:
    s = "time"
    defaults = SolverConfig()
    values = dict(
        dt=reader.number(s, "dt", defaults.dt),
        cfl=reader.number(s, "cfl", defaults.cfl),
        picard_tol=reader.number(s, "picard_tol", defaults.picard_tol),
        picard_max_iter=reader.number(s, "picard_max_iter", defaults.picard_max_iter, int),
        time_integrator=reader.raw(s, "integrator", defaults.time_integrator),
        newton=reader.flag(s, "newton", defaults.newton),
        implicit_relax=reader.number(s, "implicit_relax", defaults.implicit_relax),
        dt_max=reader.number(s, "dt_max", defaults.dt_max),
        max_halvings=reader.number(s, "max_halvings", defaults.max_halvings, int),
        rk_order=reader.number(s, "rk_order", defaults.rk_order, int),
    )
    solver = _guard(reader, s, "dt", lambda: SolverConfig(**values))
    t_end = reader.number(s, "t_end", 1.0)
    if not t_end >= 0:
        raise ConfigError("t_end must be non-negative", reader.line(s, "t_end"))
    settings = TimeSettings(t_end, solver, reader.flag(s, "adaptive", False), reader.number(s, "max_density"))
    reader.check_unused(s)
    return settings


def _parse_output(reader: _Reader) -> OutputSettings:
    s = "output"
    d = OutputSettings()
    settings = OutputSettings(
        directory=reader.raw(s, "directory", d.directory),
        tag=reader.raw(s, "tag", d.tag),
        snapshot_stride=reader.number(s, "snapshot_stride", d.snapshot_stride, int),
        series_stride=reader.number(s, "series_stride", d.series_stride, int),
        plateau_window=reader.number(s, "plateau_window", d.plateau_window),
        plateau_threshold=reader.number(s, "plateau_threshold", d.plateau_threshold),
        bump_threshold=reader.number(s, "bump_threshold", d.bump_threshold),
    )
    if settings.series_stride < 1 or settings.snapshot_stride < 0:
        raise ConfigError("series_stride must be >= 1 and snapshot_stride >= 0", reader.line(s))
    reader.check_unused(s)
    return settings


def _parse_steady(reader: _Reader) -> SteadySettings:
    s = "steady"
    d = SteadySettings()
    settings = SteadySettings(
        theta=reader.number(s, "theta", d.theta),
        tol=reader.number(s, "tol", d.tol),
        max_iter=reader.number(s, "max_iter", d.max_iter, int),
        whole_space=reader.flag(s, "whole_space", d.whole_space),
        leak_tol=reader.number(s, "leak_tol", d.leak_tol),
        support_threshold=reader.number(s, "support_threshold"),
        mass=reader.number(s, "mass"),
    )
    if not 0 < settings.theta <= 1:
        raise ConfigError("theta must lie in (0, 1]", reader.line(s, "theta"))
    reader.check_unused(s)
    return settings


def _parse_sweep(reader: _Reader) -> SweepSettings:
    s = "sweep"
    d = SweepSettings()
    settings = SweepSettings(
        param=reader.raw(s, "param", d.param),
        start=reader.number(s, "from", d.start),
        stop=reader.number(s, "to", d.stop),
        steps=reader.number(s, "steps", d.steps, int),
        mass=reader.number(s, "mass"),
    )
    if settings.param != "chi":
        raise ConfigError(f"only the 'chi' parameter can be swept, got '{settings.param}'", reader.line(s, "param"))
    if settings.steps < 1:
        raise ConfigError("steps must be positive", reader.line(s, "steps"))
    reader.check_unused(s)
    return settings


def _parse_particles(reader: _Reader) -> ParticleSettings:
    s = "particles"
    d = ParticleSettings()
    sizes = reader.vector(s, "sizes")
    settings = ParticleSettings(
        n=reader.number(s, "n", d.n, int),
        dt=reader.number(s, "dt", d.dt),
        steps=reader.number(s, "steps", d.steps, int),
        seed=reader.number(s, "seed", d.seed, int),
        cutoff=reader.number(s, "cutoff", d.cutoff),
        record_every=reader.number(s, "record_every", d.record_every, int),
        sizes=d.sizes if sizes is None else tuple(int(n) for n in sizes),
    )
    reader.check_unused(s)
    return settings


def _parse_jko(reader: _Reader) -> JkoSettings:
    s = "jko"
    d = JkoSettings()
    settings = JkoSettings(
        dt=reader.number(s, "dt", d.dt),
        t_end=reader.number(s, "t_end", d.t_end),
        quantiles=reader.number(s, "quantiles", d.quantiles, int),
    )
    reader.check_unused(s)
    return settings


def parse_config(text: str) -> RunConfig:
    reader = _Reader(text)
    grid = _parse_grid(reader)
    system, initial, single = _parse_dynamics(reader, grid)
    return RunConfig(
        grid=grid,
        system=system,
        initial=initial,
        single=single,
        time=_parse_time(reader),
        output=_parse_output(reader),
        steady=_parse_steady(reader),
        sweep=_parse_sweep(reader),
        particles=_parse_particles(reader),
        jko=_parse_jko(reader),
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as ex:
        raise ConfigError(f"cannot read configuration '{path}': {ex}")
    return parse_config(text)


# ---------------------------------------------------------------------------
# presets (parameters tuned to show each phenomenon at desk scale)

PRESETS: Dict[str, str] = {
    "heat": """
[grid]
dims = 1
cells = 128
bounds = 0, 1
boundary = periodic

[model]
internal = linear
initial = heat
initial.amplitude = 0.5

[time]
t_end = 0.05
dt = 1e-3

[output]
tag = heat
""",
    "barenblatt": """
[grid]
dims = 1
cells = 1536
bounds = -3, 3

[model]
internal = power
internal.m = 2
initial = barenblatt
initial.t0 = 0.1

# the run starts from the profile at t0 = 0.1 and ends at t = 1
[time]
t_end = 0.9
dt = 1e-3

[output]
tag = barenblatt
snapshot_stride = 100
""",
    "fokker_planck": """
[grid]
dims = 1
cells = 256
bounds = -6, 6

[model]
internal = linear
potential = power
potential.p = 2
potential.strength = 0.5
initial = gaussian
initial.center = 1.5
initial.width = 0.5

[time]
t_end = 10
dt = 1e-2

[output]
tag = fokker_planck
snapshot_stride = 100

[jko]
dt = 1e-2
t_end = 0.5
""",
    "metastability": """
# two triples of narrow bumps: each triple merges within a few time units, the two
# resulting bumps (centers of mass near -5 and 5) merge only after a few hundred
[grid]
dims = 1
cells = 512
bounds = -11, 11

[model]
internal = power
internal.m = 2
kernel = exponential
kernel.amplitude = 4
kernel.length = 1
initial = bumps
initial.centers = -7.56, -5.16, -2.76, 2.78, 5.18, 7.58
initial.widths = 0.3
initial.masses = 1.0, 0.8, 1.2, 0.9, 1.1, 0.7

[time]
t_end = 700
dt = 0.1
dt_max = 0.5

[output]
tag = metastability
snapshot_stride = 200
plateau_window = 5
plateau_threshold = 1e-6
""",
    "cellsort_halo": """
# species 1 adheres strongly to itself, species 2 weakly: 2 ends up around 1
[grid]
dims = 2
cells = 128
bounds = -4, 4

[species.1]
initial = disc
initial.radius = 1.5
initial.seed = 1

[species.2]
initial = disc
initial.radius = 1.5
initial.seed = 2

[coupling]
epsilon = 0.1
w11 = gaussian
w11.amplitude = 1.0
w11.width = 0.5
w22 = gaussian
w22.amplitude = 0.2
w22.width = 0.5
w12 = gaussian
w12.amplitude = 0.6
w12.width = 0.5
w21 = gaussian
w21.amplitude = 0.6
w21.width = 0.5

[time]
t_end = 20
dt = 0.05

[output]
tag = cellsort_halo
snapshot_stride = 40
""",
    "cellsort_boundary": """
# equal self-adhesion, weak cross-adhesion: the populations separate side by side
[grid]
dims = 2
cells = 128
bounds = -4, 4

[species.1]
initial = disc
initial.radius = 1.5
initial.seed = 1

[species.2]
initial = disc
initial.radius = 1.5
initial.seed = 2

[coupling]
epsilon = 0.1
w11 = gaussian
w11.amplitude = 1.0
w11.width = 0.5
w22 = gaussian
w22.amplitude = 1.0
w22.width = 0.5
w12 = gaussian
w12.amplitude = 0.3
w12.width = 0.5
w21 = gaussian
w21.amplitude = 0.3
w21.width = 0.5

[time]
t_end = 20
dt = 0.05

[output]
tag = cellsort_boundary
snapshot_stride = 40
""",
    "ks_fair_competition": """
# m = 1.5, k = -0.5 in 1D: k = (1 - m) d
[grid]
dims = 1
cells = 2048
bounds = -10, 10

[model]
internal = power
internal.m = 1.5
kernel = power
kernel.k = -0.5
kernel.chi_c_factor = {factor}
initial = gaussian
initial.width = 1

[time]
t_end = 5
dt = 1e-2
max_density = 1e4

[output]
tag = ks_fair_competition_{variant}
snapshot_stride = 50
""",
}

PRESET_VARIANTS = {"ks_fair_competition": {"subcritical": 0.5, "supercritical": 4.0}}


def preset_text(name: str, variant: str = None) -> str:
    """The INI text of a preset; ks_fair_competition takes the subcritical or supercritical variant."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}', expected one of {', '.join(sorted(PRESETS))}")
    variants = PRESET_VARIANTS.get(name)
    if variants is None:
        if variant is not None:
            raise ConfigError(f"preset '{name}' has no variants")
        return PRESETS[name].lstrip()
    variant = variant or "subcritical"
    if variant not in variants:
        raise ConfigError(f"unknown variant '{variant}' of '{name}', expected one of {', '.join(variants)}")
    return PRESETS[name].format(factor=variants[variant], variant=variant).lstrip()


def preset(name: str, variant: str = None) -> RunConfig:
    return parse_config(preset_text(name, variant))


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    """A copy of `config` with top-level fields replaced (e.g. output=...)."""
    return replace(config, **changes)

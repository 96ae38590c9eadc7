__version__ = "0.1.0"

from .config import RunConfig, load_config, parse_config, preset
from .energetics import convolve, free_energy
from .mesh import Field, Grid, build_grid, integrate
from .solver import SolverConfig, StepReport, step_explicit, step_implicit, system_step
from .specs import InternalEnergySpec, KernelSpec, MobilitySpec, ModelSpec, PotentialSpec, SpeciesSpec, SystemSpec
from .workbench import run, simulation_session

__all__ = [
    "Field",
    "Grid",
    "InternalEnergySpec",
    "KernelSpec",
    "MobilitySpec",
    "ModelSpec",
    "PotentialSpec",
    "RunConfig",
    "SolverConfig",
    "SpeciesSpec",
    "StepReport",
    "SystemSpec",
    "build_grid",
    "convolve",
    "free_energy",
    "integrate",
    "load_config",
    "parse_config",
    "preset",
    "run",
    "simulation_session",
    "step_explicit",
    "step_implicit",
    "system_step",
]

"""
Frozen descriptions of the free energy: internal energy, potential, kernel and mobility.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .exceptions import ModelError

INTERNAL_VARIANTS = ("none", "linear", "power")
POTENTIAL_VARIANTS = ("zero", "power", "double_well", "custom_table")
KERNEL_VARIANTS = ("zero", "power", "log", "exponential", "gaussian", "characteristic")
MOBILITY_VARIANTS = ("linear", "saturating")


@dataclass(frozen=True)
class InternalEnergySpec:
    """
    none:   U = 0
    linear: U(s) = s log s
    power:  U(s) = s^m / (m - 1), m > 0 and m != 1
    """

    variant: str = "none"
    m: Optional[float] = None

    def __post_init__(self):
        if self.variant not in INTERNAL_VARIANTS:
            raise ModelError(f"Unknown internal energy '{self.variant}', expected one of {INTERNAL_VARIANTS}.")
        if self.variant == "power":
            if self.m is None or not self.m > 0 or self.m == 1:
                raise ModelError(f"Power internal energy needs m > 0 and m != 1, got m={self.m}.")

    @classmethod
    def linear(cls) -> "InternalEnergySpec":
        return cls("linear")

    @classmethod
    def power(cls, m: float) -> "InternalEnergySpec":
        return cls("power", float(m))

    @property
    def exponent(self) -> float:
        """The homogeneity exponent of U; linear diffusion is the m = 1 member."""
        return 1.0 if self.variant == "linear" else float(self.m or 0.0)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """
    zero:         V = 0
    power:        V(x) = strength * |x|^p
    double_well:  V(x) = a|x|^4 - b|x|^2, a > 0
    custom_table: V sampled on the grid cells of a Field (any sign through `offset`)
    """

    variant: str = "zero"
    p: Optional[float] = None
    strength: float = 1.0
    a: Optional[float] = None
    b: Optional[float] = None
    table: Optional[object] = field(default=None, repr=False)
    offset: float = 0.0

    def __post_init__(self):
        if self.variant not in POTENTIAL_VARIANTS:
            raise ModelError(f"Unknown potential '{self.variant}', expected one of {POTENTIAL_VARIANTS}.")
        if self.variant == "power" and (self.p is None or not self.p > 0):
            raise ModelError(f"Power potential needs p > 0, got p={self.p}.")
        if self.variant == "double_well":
            if self.a is None or self.b is None or not self.a > 0:
                raise ModelError("Double-well potential needs a > 0 and a value for b.")
        if self.variant == "custom_table" and self.table is None:
            raise ModelError("custom_table potential needs a table Field.")

    def _key(self):
        return (self.variant, self.p, self.strength, self.a, self.b, id(self.table), self.offset)

    def __eq__(self, other):
        return isinstance(other, PotentialSpec) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @classmethod
    def power(cls, p: float, strength: float = 1.0) -> "PotentialSpec":
        return cls("power", p=float(p), strength=float(strength))

    @classmethod
    def double_well(cls, a: float, b: float) -> "PotentialSpec":
        return cls("double_well", a=float(a), b=float(b))

    @classmethod
    def custom_table(cls, table, offset: float = 0.0) -> "PotentialSpec":
        return cls("custom_table", table=table, offset=float(offset))

    @property
    def is_zero(self) -> bool:
        return self.variant == "zero" or (self.variant == "power" and self.strength == 0)


@dataclass(frozen=True)
class KernelSpec:
    """
    Radial interaction kernels W(x) = w(|x|).

    power:          w(r) = strength * r^k / k, k != 0
    log:            w(r) = strength * log r  (the k -> 0 member)
    exponential:    w(r) = -strength * exp(-r / length)
    gaussian:       w(r) = -strength * exp(-r^2 / (2 length^2))
    characteristic: w(r) = -strength for r < length, 0 otherwise

    `strength` is chi for power/log, the amplitude for exponential/gaussian and the
    depth for characteristic; `length` is the range, width or radius.
    """

    variant: str = "zero"
    strength: float = 0.0
    k: Optional[float] = None
    length: Optional[float] = None

    def __post_init__(self):
        if self.variant not in KERNEL_VARIANTS:
            raise ModelError(f"Unknown kernel '{self.variant}', expected one of {KERNEL_VARIANTS}.")
        if not np.isfinite(self.strength):
            raise ModelError("Kernel strength must be finite.")
        if self.variant == "power":
            if self.k is None or self.k == 0:
                raise ModelError("Power kernel needs k != 0; use the log kernel for k = 0.")
            if not self.k > -2:
                raise ModelError(f"Power kernel exponent k={self.k} is not locally integrable in d <= 2.")
        if self.variant in ("power", "log") and self.strength < 0:
            raise ModelError(f"Kernel strength chi must be non-negative, got {self.strength}.")
        if self.variant in ("exponential", "gaussian", "characteristic"):
            if self.length is None or not self.length > 0:
                raise ModelError(f"{self.variant} kernel needs a positive length, got {self.length}.")

    @classmethod
    def zero(cls) -> "KernelSpec":
        return cls()

    @classmethod
    def power(cls, k: float, chi: float = 1.0) -> "KernelSpec":
        return cls("power", float(chi), k=float(k))

    @classmethod
    def log(cls, chi: float = 1.0) -> "KernelSpec":
        return cls("log", float(chi))

    @classmethod
    def exponential(cls, amplitude: float, length: float) -> "KernelSpec":
        return cls("exponential", float(amplitude), length=float(length))

    @classmethod
    def gaussian(cls, amplitude: float, width: float) -> "KernelSpec":
        return cls("gaussian", float(amplitude), length=float(width))

    @classmethod
    def characteristic(cls, radius: float, depth: float) -> "KernelSpec":
        return cls("characteristic", float(depth), length=float(radius))

    def scaled(self, factor: float) -> "KernelSpec":
        """The same kernel with its strength multiplied by `factor` (chi-families)."""
        if self.variant == "zero":
            return self
        return replace(self, strength=self.strength * float(factor))

    @property
    def is_zero(self) -> bool:
        return self.variant == "zero" or self.strength == 0

    @property
    def is_singular(self) -> bool:
        """True when W blows up at the origin."""
        return self.variant == "log" or (self.variant == "power" and self.k < 0)

    @property
    def has_bounded_gradient(self) -> bool:
        """True when grad W is bounded near the origin, which particle dynamics require."""
        if self.variant == "power":
            return self.k >= 1
        return self.variant in ("zero", "exponential", "gaussian")

    @property
    def homogeneity(self) -> Optional[float]:
        """k for power kernels, 0 for log, None when W is not homogeneous."""
        if self.variant == "power":
            return self.k
        if self.variant == "log":
            return 0.0
        return None

    def check_dimension(self, dims: int) -> None:
        if self.variant == "power" and not self.k > -dims:
            raise ModelError(f"Power kernel needs k > -{dims} in {dims}D, got k={self.k}.")


@dataclass(frozen=True)
class MobilitySpec:
    """linear: m(s) = s; saturating: m(s) = max(0, s(1 - s/rho_max))."""

    variant: str = "linear"
    rho_max: Optional[float] = None

    def __post_init__(self):
        if self.variant not in MOBILITY_VARIANTS:
            raise ModelError(f"Unknown mobility '{self.variant}', expected one of {MOBILITY_VARIANTS}.")
        if self.variant == "saturating" and (self.rho_max is None or not self.rho_max > 0):
            raise ModelError(f"Saturating mobility needs rho_max > 0, got {self.rho_max}.")

    @classmethod
    def saturating(cls, rho_max: float) -> "MobilitySpec":
        return cls("saturating", float(rho_max))


@dataclass(frozen=True)
class ModelSpec:
    internal: InternalEnergySpec = field(default_factory=InternalEnergySpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    mobility: MobilitySpec = field(default_factory=MobilitySpec)

    def as_system(self, mass: float = 1.0) -> "SystemSpec":
        species = SpeciesSpec(self.internal, self.potential, self.mobility)
        return SystemSpec((species,), ((self.kernel,),), 0.0, (float(mass),))

    def with_kernel(self, kernel: KernelSpec) -> "ModelSpec":
        return replace(self, kernel=kernel)


@dataclass(frozen=True)
class SpeciesSpec:
    """One species of a system: a ModelSpec without its kernel."""

    internal: InternalEnergySpec = field(default_factory=InternalEnergySpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    mobility: MobilitySpec = field(default_factory=MobilitySpec)


@dataclass(frozen=True)
class SystemSpec:
    """
    n species with coupling[a][b] = W_ab acting on species a through the density
    of species b. W_ab and W_ba are independent; the flow is a gradient flow only
    when the coupling matrix is symmetric.
    """

    species: Tuple[SpeciesSpec, ...]
    coupling: Tuple[Tuple[KernelSpec, ...], ...]
    epsilon: float = 0.0
    species_masses: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        n = len(self.species)
        if n < 1:
            raise ModelError("A system needs at least one species.")
        object.__setattr__(self, "species", tuple(self.species))
        coupling = tuple(tuple(row) for row in self.coupling)
        if len(coupling) != n or any(len(row) != n for row in coupling):
            raise ModelError(f"Coupling must be a {n}x{n} matrix of kernels.")
        if any(not isinstance(w, KernelSpec) for row in coupling for w in row):
            raise ModelError("Coupling entries must be KernelSpec instances.")
        object.__setattr__(self, "coupling", coupling)
        if not self.epsilon >= 0:
            raise ModelError(f"Local repulsion epsilon must be >= 0, got {self.epsilon}.")
        masses = self.species_masses
        if masses is None:
            masses = (1.0,) * n
        masses = tuple(float(m) for m in masses)
        if len(masses) != n or any(not m > 0 for m in masses):
            raise ModelError("species_masses needs one positive mass per species.")
        object.__setattr__(self, "species_masses", masses)

    @property
    def size(self) -> int:
        return len(self.species)

    @property
    def is_symmetric(self) -> bool:
        n = self.size
        return all(self.coupling[a][b] == self.coupling[b][a] for a in range(n) for b in range(a + 1, n))

    def as_system(self, mass: float = None) -> "SystemSpec":
        return self

    def species_model(self, a: int) -> ModelSpec:
        """The single-species model seen by species a when every other species is absent."""
        s = self.species[a]
        return ModelSpec(s.internal, s.potential, self.coupling[a][a], s.mobility)

    def scaled(self, factor: float) -> "SystemSpec":
        coupling = tuple(tuple(w.scaled(factor) for w in row) for row in self.coupling)
        return replace(self, coupling=coupling)

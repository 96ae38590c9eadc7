"""
Uniform cell-centered grids in one and two dimensions and the fields on them.

Binary dump: b"ADFV", u32 version, u8 dims, u64 cells and (f64 lo, f64 hi) per axis,
u8 boundary, then the f64 values in row-major order, all little-endian.
"""

import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .exceptions import GridError

NO_FLUX = "no-flux"
PERIODIC = "periodic"
BOUNDARIES = (NO_FLUX, PERIODIC)

MIN_CELLS = 4

_MAGIC = b"ADFV"
_VERSION = 1
_BOUNDARY_TAGS = {NO_FLUX: 0, PERIODIC: 1}


@dataclass(frozen=True)
class Grid:
    dims: int
    cells: Tuple[int, ...]
    bounds: Tuple[Tuple[float, float], ...]
    boundary: str = NO_FLUX

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise GridError(f"Only 1D and 2D grids are supported, got dims={self.dims}.")
        if len(self.cells) != self.dims or len(self.bounds) != self.dims:
            raise GridError("cells and bounds need one entry per axis.")
        for n, (lo, hi) in zip(self.cells, self.bounds):
            if int(n) != n or n < MIN_CELLS:
                raise GridError(f"Each axis needs at least {MIN_CELLS} cells, got {n}.")
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise GridError(f"Axis extent must be positive, got ({lo}, {hi}).")
        if self.boundary not in BOUNDARIES:
            raise GridError(f"Unknown boundary '{self.boundary}', expected one of {BOUNDARIES}.")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(n) for n in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dx(self) -> Tuple[float, ...]:
        return tuple((hi - lo) / n for n, (lo, hi) in zip(self.cells, self.bounds))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def lengths(self) -> Tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def centers(self, axis: int = 0) -> np.ndarray:
        lo = self.bounds[axis][0]
        return lo + (np.arange(self.cells[axis]) + 0.5) * self.dx[axis]

    def edges(self, axis: int = 0) -> np.ndarray:
        lo = self.bounds[axis][0]
        return lo + np.arange(self.cells[axis] + 1) * self.dx[axis]

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays, each with the grid shape."""
        axes = [self.centers(a) for a in range(self.dims)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.dims, tuple(n * factor for n in self.cells), self.bounds, self.boundary)


def build_grid(dims: int, cells_per_axis, bounds_per_axis, boundary: str = NO_FLUX) -> Grid:
    """
    Build a uniform grid. `cells_per_axis` may be a single integer and
    `bounds_per_axis` a single (lo, hi) pair; both are then repeated on every axis.
    """
    if np.isscalar(cells_per_axis):
        cells_per_axis = (cells_per_axis,) * dims
    bounds_per_axis = tuple(bounds_per_axis)
    if len(bounds_per_axis) == 2 and np.isscalar(bounds_per_axis[0]):
        bounds_per_axis = (bounds_per_axis,) * dims
    cells = tuple(int(n) for n in cells_per_axis)
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds_per_axis)
    return Grid(dims, cells, bounds, boundary)


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.size != self.grid.size:
            raise GridError(f"Field has {values.size} values, grid has {self.grid.size} cells.")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise GridError("Field values must be finite.")
        if np.any(values < 0):
            raise GridError(f"Field values must be non-negative (min {values.min():.3e}).")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "Field":
        """Sample `fn(*coordinates)` at the cell centers."""
        return cls(grid, np.broadcast_to(fn(*grid.coordinates()), grid.shape))

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def min(self) -> float:
        return float(self.values.min())


def cell_sum(values: np.ndarray) -> float:
    """Pairwise sum over every cell of a (possibly 2D) array, in row-major order."""
    return float(np.sum(np.ascontiguousarray(values).ravel()))


def integrate(f: Field) -> float:
    """Total mass: sum of cell values times the cell volume."""
    return cell_sum(f.values) * f.grid.cell_volume


def center_of_mass(f: Field) -> np.ndarray:
    mass = integrate(f)
    if mass == 0.0:
        raise GridError("Center of mass of an empty field is undefined.")
    coords = f.grid.coordinates()
    return np.array([cell_sum(f.values * x) * f.grid.cell_volume / mass for x in coords])


def moment(f: Field, order: int, center=0.0) -> float:
    """
    Moment of order 0, 1 or 2 about `center`. Order 1 is the signed first moment
    (its Euclidean norm in 2D); orders 0 and 2 weight by |x - c|^p.
    """
    if order not in (0, 1, 2):
        raise GridError(f"Unsupported moment order {order}; expected 0, 1 or 2.")
    if order == 0:
        return integrate(f)
    c = np.broadcast_to(np.asarray(center, dtype=float), (f.grid.dims,))
    coords = f.grid.coordinates()
    vol = f.grid.cell_volume
    if order == 1:
        parts = np.array([cell_sum(f.values * (x - ci)) * vol for x, ci in zip(coords, c)])
        return float(parts[0]) if f.grid.dims == 1 else float(np.linalg.norm(parts))
    r2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
    return cell_sum(f.values * r2) * vol


def atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_field(f: Field) -> bytes:
    grid = f.grid
    parts = [_MAGIC, struct.pack("<IB", _VERSION, grid.dims)]
    parts.append(struct.pack(f"<{grid.dims}Q", *grid.cells))
    for lo, hi in grid.bounds:
        parts.append(struct.pack("<dd", lo, hi))
    parts.append(struct.pack("<B", _BOUNDARY_TAGS[grid.boundary]))
    parts.append(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_field(payload: bytes) -> Field:
    if payload[:4] != _MAGIC:
        raise GridError("Not a field dump: bad magic bytes.")
    try:
        version, dims = struct.unpack_from("<IB", payload, 4)
        if version != _VERSION:
            raise GridError(f"Unsupported field dump version {version}.")
        offset = 9
        cells = struct.unpack_from(f"<{dims}Q", payload, offset)
        offset += 8 * dims
        bounds = []
        for _ in range(dims):
            bounds.append(struct.unpack_from("<dd", payload, offset))
            offset += 16
        (tag,) = struct.unpack_from("<B", payload, offset)
        offset += 1
    except struct.error as ex:
        raise GridError(f"Truncated field dump header: {ex}")
    boundary = {v: k for k, v in _BOUNDARY_TAGS.items()}.get(tag)
    if boundary is None:
        raise GridError(f"Unknown boundary tag {tag} in field dump.")
    grid = Grid(dims, tuple(int(n) for n in cells), tuple(bounds), boundary)
    body = payload[offset:]
    if len(body) != 8 * grid.size:
        raise GridError(f"Field dump carries {len(body)} value bytes, expected {8 * grid.size}.")
    values = np.frombuffer(body, dtype="<f8").reshape(grid.shape)
    return Field(grid, values)


def write_field(path: str, f: Field) -> None:
    atomic_write(path, encode_field(f))


def read_field(path: str) -> Field:
    with open(path, "rb") as handle:
        return decode_field(handle.read())

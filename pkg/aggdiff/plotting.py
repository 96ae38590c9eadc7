"""
SVG plots of series files and field dumps. Output bytes depend only on the input:
the SVG hash salt is fixed and no creation date is written.

matplotlib is optional (the `plot` extra); without it every entry point raises PlotError.
"""

import logging
import os
from typing import Sequence

import numpy as np

from .detection import is_matplotlib_installed
from .exceptions import AggDiffError, PlotError
from .mesh import Field, read_field
from .workbench import read_series

logger = logging.getLogger(__name__)

SPECIES_COLOURS = ("#c0392b", "#2471a3", "#229954", "#b7950b")


def _figure():
    if not is_matplotlib_installed():
        raise PlotError("Plotting needs matplotlib; install the 'plot' extra.")
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "aggdiff"
    matplotlib.rcParams["svg.fonttype"] = "path"
    from matplotlib.figure import Figure

    return Figure(figsize=(6.0, 4.0))


def _save(fig, out_path: str) -> str:
    directory = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(directory, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    logger.info("plot written to %s", out_path)
    return out_path


def plot_series(csv_path: str, out_path: str, column: str = "E_total", relative: bool = False) -> str:
    """
    `column` against t. With relative=True the plot shows E - E_inf on a log axis,
    E_inf being the last logged value; non-positive differences are dropped.
    """
    try:
        header, data = read_series(csv_path)
    except (OSError, ValueError) as ex:
        raise PlotError(f"Cannot read series '{csv_path}': {ex}")
    if data.size == 0:
        raise PlotError(f"Series '{csv_path}' has no rows.")
    if "t" not in header or column not in header:
        raise PlotError(f"Series '{csv_path}' has no '{column}' column.")
    t = data[:, header.index("t")]
    y = data[:, header.index(column)]
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    if relative:
        diff = y - y[-1]
        keep = diff > 0
        if not np.any(keep):
            raise PlotError("Relative energy has no positive values to draw on a log axis.")
        ax.semilogy(t[keep], diff[keep], color=SPECIES_COLOURS[0])
        ax.set_ylabel(f"{column} - final value")
    else:
        ax.plot(t, y, color=SPECIES_COLOURS[0])
        ax.set_ylabel(column)
    ax.set_xlabel("t")
    return _save(fig, out_path)


def plot_fields(fields: Sequence[Field], out_path: str, labels: Sequence[str] = None) -> str:
    """
    1D: one line per species. 2D: a heatmap with colourbar for one species, and an
    RGB overlay (one colour per species, each scaled to its own maximum) for several.
    """
    if not fields:
        raise PlotError("Nothing to plot.")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields[1:]):
        raise PlotError("All fields of one plot must share a grid.")
    labels = labels or [f"species {a + 1}" for a in range(len(fields))]
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    if grid.dims == 1:
        for a, f in enumerate(fields):
            ax.plot(grid.centers(0), f.values, color=SPECIES_COLOURS[a % len(SPECIES_COLOURS)], label=labels[a])
        ax.set_xlabel("x")
        ax.set_ylabel("density")
        if len(fields) > 1:
            ax.legend()
        return _save(fig, out_path)
    (x0, x1), (y0, y1) = grid.bounds
    extent = (x0, x1, y0, y1)
    if len(fields) == 1:
        image = ax.imshow(np.asarray(fields[0].values).T, origin="lower", extent=extent, cmap="viridis")
        fig.colorbar(image, ax=ax, label="density")
    else:
        rgb = np.ones(grid.shape + (3,))
        for a, f in enumerate(fields):
            values = np.asarray(f.values)
            level = values / values.max() if values.max() > 0 else values
            colour = np.array([int(SPECIES_COLOURS[a % len(SPECIES_COLOURS)][i:i + 2], 16) / 255 for i in (1, 3, 5)])
            rgb -= level[..., None] * (1.0 - colour)
        ax.imshow(np.clip(rgb, 0.0, 1.0).transpose(1, 0, 2), origin="lower", extent=extent)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _save(fig, out_path)


def plot(path: str, out_path: str = None, relative: bool = False, column: str = "E_total") -> str:
    """Plot a series CSV or one or more field dumps (comma-separated paths) as SVG."""
    paths = [p for p in path.split(",") if p]
    if not paths:
        raise PlotError("No input file given.")
    out_path = out_path or os.path.splitext(paths[0])[0] + ".svg"
    if paths[0].endswith(".csv"):
        return plot_series(paths[0], out_path, column, relative)
    fields = []
    for p in paths:
        try:
            fields.append(read_field(p))
        except OSError as ex:
            raise PlotError(f"Cannot read '{p}': {ex}")
        except AggDiffError as ex:
            raise PlotError(f"Malformed field dump '{p}': {ex}")
    return plot_fields(fields, out_path)

"""
Command line entry point (`aggdiff`).

Exit status: 0 on success, 2 on configuration errors, 3 when a solver or a
steady-state computation fails (including a failed dissipation check), 1 for
any other aggdiff error.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List

from .config import RunConfig, load_config, preset, preset_text
from .exceptions import AggDiffError, ConfigError, SolverError, StationaryError
from .stationary import classify_regime
from .workbench import run, run_compare_jko, run_geodesic, run_particles, run_steady, run_sweep

EXIT_CONFIG = 2
EXIT_FAILURE = 3


def _directory(args, config: RunConfig) -> str:
    return args.out or config.output.directory


def _cmd_run(args) -> int:
    config = load_config(args.config)
    result = run(config, _directory(args, config))
    print(f"{result.reason}: {result.steps} steps, t={result.t:.6g}, output in {result.directory}")
    return result.status


def _cmd_preset(args) -> int:
    if args.emit:
        sys.stdout.write(preset_text(args.name, args.variant))
        return 0
    config = preset(args.name, args.variant)
    result = run(config, _directory(args, config))
    print(f"{result.reason}: {result.steps} steps, t={result.t:.6g}, output in {result.directory}")
    return result.status


def _cmd_steady(args) -> int:
    config = load_config(args.config)
    result = run_steady(config, _directory(args, config))
    print(f"converged={result.converged} iterations={result.iterations} residual={result.residual_sup:.3e}")
    for component, constant in result.lagrange_constants:
        print(f"  component {component}: C = {constant:.12g}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.param != "chi":
        raise ConfigError(f"only 'chi' can be swept, got '{args.param}'")
    reports, bracket = run_sweep(config, _directory(args, config), args.start, args.stop, args.steps)
    for r in reports:
        mode = "-" if r.unstable_mode_index is None else r.unstable_mode_index
        print(f"chi={r.chi:.6g} leading={r.leading_eigenvalue:.6e} mode={mode}")
    if bracket is not None:
        print(f"bifurcation between chi={bracket[0]:.6g} and chi={bracket[1]:.6g}")
    return 0


def _cmd_classify(args) -> int:
    report = classify_regime(args.m, args.k, args.d)
    print(json.dumps(dataclasses.asdict(report), indent=2))
    return 0


def _cmd_particles(args) -> int:
    config = load_config(args.config)
    trajectory, gaps = run_particles(config, _directory(args, config))
    print(f"{len(trajectory)} frames recorded up to t={trajectory[-1].t:.6g}")
    for gap in gaps:
        print(f"N={gap.n}: " + " ".join(f"{e:.4e}" for e in gap.errors))
    return 0


def _cmd_compare_jko(args) -> int:
    config = load_config(args.config)
    gap = run_compare_jko(config, _directory(args, config))
    print(f"w2 gap between JKO and finite volume at t={config.jko.t_end:g}: {gap:.6e}")
    return 0


def _cmd_geodesic(args) -> int:
    first, second = load_config(args.config_a), load_config(args.config_b)
    frames = run_geodesic(first, second, args.frames, _directory(args, first))
    print(f"{len(frames)} frames written")
    return 0


def _cmd_plot(args) -> int:
    from .plotting import plot

    output = args.output
    if output is None and args.out:
        stem = os.path.splitext(os.path.basename(args.file.split(",")[0]))[0]
        output = os.path.join(args.out, stem + ".svg")
    print(plot(args.file, output, args.relative, args.column))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggdiff", description="Aggregation-diffusion finite-volume workbench.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("config", help="INI run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
        p.set_defaults(handler=handler)
        return p

    command("run", _cmd_run, "time-step a configuration")
    p = command("preset", _cmd_preset, "run or print a named preset", config=False)
    p.add_argument("name")
    p.add_argument("--variant", default=None)
    p.add_argument("--emit", action="store_true", help="print the preset's INI text instead of running it")
    command("steady", _cmd_steady, "compute a minimiser by the fixed-point iteration")
    p = command("sweep", _cmd_sweep, "linear stability of the constant state over chi")
    p.add_argument("--param", default="chi")
    p.add_argument("--from", dest="start", type=float, default=None)
    p.add_argument("--to", dest="stop", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p = command("classify", _cmd_classify, "regime of U = s^m/(m-1), W = chi|x|^k/k", config=False)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    command("particles", _cmd_particles, "run the particle model")
    command("compare-jko", _cmd_compare_jko, "JKO curve against the finite-volume solution")
    p = command("geodesic", _cmd_geodesic, "Wasserstein geodesic between two initial data", config=False)
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--frames", type=int, default=11)
    p = command("plot", _cmd_plot, "SVG plot of a series CSV or field dumps", config=False)
    p.add_argument("file", help="series.csv or one or more .adfv dumps separated by commas")
    p.add_argument("--output", default=None, help="SVG path (default: next to the input)")
    p.add_argument("--relative", action="store_true", help="log-scale E - E_final")
    p.add_argument("--column", default="E_total")
    return parser


def main(argv: List[str] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as ex:
        print(f"configuration error: {ex}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, StationaryError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_FAILURE
    except AggDiffError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

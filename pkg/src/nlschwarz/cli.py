"""Command line entry point.

    nlschwarz weak-scaling [--config FILE] [flags]
    nlschwarz force-ramp   [--config FILE] [flags]
    nlschwarz dump-mesh    --problem P --cells-per-subdomain N --subdomain-grid MXxMY --out F

Values are resolved as built-in defaults < config file < flags. Forces are given in MN/m^2.
Exit status: 0 when every requested run executed (individual solver failures are
recorded in the report), 2 on configuration errors, 1 on I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .errors import InvalidArgumentError
from .experiments import ExperimentConfig, emit_report, run_experiment
from .fem import MaterialParams
from .mesh import decompose, dump_mesh, generate_structured_mesh
from .schwarz import VARIANTS, SolverConfig

EXIT_CONFIG = 2
EXIT_IO = 1

# SolverConfig fields exposed as --kebab-case flags; variant/overlap/workers have their own
_SOLVER_SKIP = {"variant", "overlap", "workers", "restricted", "rebuild_coarse_each_outer",
                "inner_warm_start"}
_TOP_KEYS = {f.name for f in fields(ExperimentConfig)}


def parse_pair(text: str, sep="x") -> tuple:
    parts = str(text).lower().split(sep)
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected N or AxB, got {text!r}")
    try:
        a, b = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers in {text!r}") from None
    if a < 1 or b < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return a, b


def parse_float_list(text: str) -> list:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML file with experiment settings")
    p.add_argument("--problem", choices=("diffusion", "neohooke"))
    p.add_argument("--variant", action="append", choices=VARIANTS,
                   help="solver variant; repeat for several")
    p.add_argument("--cells-per-subdomain", type=parse_pair, metavar="N|NXxNY")
    p.add_argument("--subdomain-grid", type=parse_pair, action="append", metavar="MXxMY",
                   help="subdomain grid; repeat for several")
    p.add_argument("--overlap", type=int)
    p.add_argument("--force-list", type=parse_float_list, metavar="F1,F2,...",
                   help="volume force values in MN/m^2")
    p.add_argument("--width", type=float)
    p.add_argument("--height", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--youngs-modulus", type=float)
    p.add_argument("--poisson-ratio", type=float)
    p.add_argument("--piola-mu-denominator", type=int, choices=(1, 2))
    g = p.add_argument_group("solver settings")
    for f in fields(SolverConfig):
        if f.name in _SOLVER_SKIP:
            continue
        kind = str if f.name == "outer_norm" else (float if "tol" in f.name else int)
        g.add_argument("--" + f.name.replace("_", "-"), type=kind, dest="solver_" + f.name)
    g.add_argument("--unrestricted", action="store_true", default=None,
                   help="use plain prolongations P_i instead of the partition of unity")
    g.add_argument("--rebuild-coarse-each-outer", action="store_true", default=None)
    g.add_argument("--inner-warm-start", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlschwarz",
                                     description="Nonlinear Schwarz solver experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("weak-scaling", "force-ramp"):
        _add_run_flags(sub.add_parser(name))
    d = sub.add_parser("dump-mesh", help="write the structured mesh as text")
    d.add_argument("--problem", choices=("diffusion", "neohooke"), default="diffusion")
    d.add_argument("--cells-per-subdomain", type=parse_pair, default=(20, 20))
    d.add_argument("--subdomain-grid", type=parse_pair, default=(2, 2))
    d.add_argument("--width", type=float)
    d.add_argument("--height", type=float)
    d.add_argument("--out", required=True)
    return parser


def load_config_file(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{path}: top level must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise InvalidArgumentError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def resolve_config(command: str, args: argparse.Namespace) -> ExperimentConfig:
    experiment = command.replace("-", "_")
    data = load_config_file(args.config) if args.config else {}
    if data.get("experiment", experiment) != experiment:
        raise InvalidArgumentError(
            f"config file is for {data['experiment']!r} but the command is {command!r}")
    data.pop("experiment", None)

    base = ExperimentConfig.defaults_for(experiment)
    solver = asdict(base.solver)
    solver.update(data.pop("solver", None) or {})
    material = asdict(base.material)
    material.update(data.pop("material", None) or {})
    merged = {k: v for k, v in asdict(base).items()
              if k not in ("solver", "material", "experiment")}
    merged.update(data)

    flag_map = {"problem": "problem", "variant": "variants",
                "cells_per_subdomain": "cells_per_subdomain", "subdomain_grid": "subdomain_grids",
                "overlap": "overlap", "force_list": "forces", "width": "width",
                "height": "height", "seed": "seed", "workers": "workers", "out": "out",
                "format": "format"}
    for flag, key in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            merged[key] = value
    for name in ("youngs_modulus", "poisson_ratio", "piola_mu_denominator"):
        value = getattr(args, name)
        if value is not None:
            material[{"youngs_modulus": "E", "poisson_ratio": "nu"}.get(name, name)] = value
    for f in fields(SolverConfig):
        value = getattr(args, "solver_" + f.name, None)
        if value is not None:
            solver[f.name] = value
    if args.unrestricted:
        solver["restricted"] = False
    if args.rebuild_coarse_each_outer:
        solver["rebuild_coarse_each_outer"] = True
    if args.inner_warm_start:
        solver["inner_warm_start"] = True
    if merged["variants"]:
        solver["variant"] = merged["variants"][0]

    try:
        merged["solver"] = SolverConfig(**solver)
        merged["material"] = MaterialParams(**material)
        return ExperimentConfig(experiment=experiment, **merged)
    except TypeError as exc:
        raise InvalidArgumentError(str(exc)) from exc


def _dump_mesh(args) -> int:
    neo = args.problem == "neohooke"
    cx, cy = args.cells_per_subdomain
    mx, my = args.subdomain_grid
    width = args.width or (5.0 if neo else 1.0)
    height = args.height or 1.0
    mesh = generate_structured_mesh(cx * mx, cy * my, width, height,
                                    "beam" if neo else "all_dirichlet", 2 if neo else 1)
    decompose(mesh, mx, my, 1)  # validates the grid
    dump_mesh(mesh, args.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "dump-mesh":
            return _dump_mesh(args)
        cfg = resolve_config(args.command, args)
        out = cfg.out or f"{cfg.experiment}.{cfg.format}"
        parent = Path(out).resolve().parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory {parent} does not exist")
        records = run_experiment(cfg)
        emit_report(records, out, cfg.format, cfg.echo())
    except (InvalidArgumentError, yaml.YAMLError) as exc:
        print(f"nlschwarz: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"nlschwarz: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    n_fail = sum(not r.converged for r in records)
    print(f"wrote {len(records)} records to {out} ({n_fail} not converged)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

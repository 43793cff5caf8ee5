#!/usr/bin/env python3
"""Weak-scaling study on the diffusion model problem.

Runs one-level, additive and hybrid nonlinear Schwarz over growing subdomain grids with
fixed cells per subdomain, writes the report and prints total GMRES iterations per cell.

    python scripts/run_weak_scaling.py --cells 20 --grids 2x2 4x4 8x8 --out weak.csv
"""

import argparse
import logging

from nlschwarz.cli import parse_pair
from nlschwarz.experiments import ExperimentConfig, emit_report, run_weak_scaling


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=parse_pair, default=(20, 20))
    ap.add_argument("--grids", type=parse_pair, nargs="+", default=[(2, 2), (4, 4), (8, 8)])
    ap.add_argument("--overlap", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="weak_scaling.csv")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig.defaults_for(
        "weak_scaling", cells_per_subdomain=args.cells, subdomain_grids=args.grids,
        overlap=args.overlap, workers=args.workers, out=args.out,
        format="json" if args.out.endswith(".json") else "csv")
    records = run_weak_scaling(cfg)
    emit_report(records, cfg.out, cfg.format, cfg.echo())

    variants = list(dict.fromkeys(r.variant for r in records))
    print(f"{'grid':>8} {'dofs':>8} " + " ".join(f"{v:>10}" for v in variants))
    for grid in dict.fromkeys(r.grid for r in records):
        row = {r.variant: r for r in records if r.grid == grid}
        cells = [str(row[v].total_gmres) if row[v].converged else "fail" for v in variants]
        print(f"{grid:>8} {row[variants[0]].n_dofs:>8} " + " ".join(f"{c:>10}" for c in cells))
    print(f"report: {cfg.out}")


if __name__ == "__main__":
    main()

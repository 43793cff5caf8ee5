#!/usr/bin/env python3
"""Force-ramp robustness study on the Neo-Hookean beam.

Solves the bending problem for each body force (MN/m^2) with Newton-Krylov and the
two-level Schwarz variants, then prints outer/GMRES iterations and the largest force
each method converged for.

    python scripts/run_force_ramp.py --forces 4 4.5 5 6 7 7.5 --out ramp.csv
"""

import argparse
import logging

from nlschwarz.cli import parse_pair
from nlschwarz.experiments import (ExperimentConfig, emit_report, max_converged_force,
                                   run_force_ramp)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--forces", type=float, nargs="+", default=[4, 4.5, 5, 6, 7, 7.5])
    ap.add_argument("--cells", type=parse_pair, default=(5, 5))
    ap.add_argument("--grid", type=parse_pair, default=(10, 2))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="force_ramp.csv")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig.defaults_for(
        "force_ramp", forces=args.forces, cells_per_subdomain=args.cells,
        subdomain_grids=[args.grid], workers=args.workers, out=args.out,
        format="json" if args.out.endswith(".json") else "csv")
    records = run_force_ramp(cfg)
    emit_report(records, cfg.out, cfg.format, cfg.echo())

    print(f"{'force':>8} {'variant':>9} {'outer':>6} {'gmres':>6}")
    for r in records:
        status = f"{r.outer_iters:>6} {r.total_gmres:>6}" if r.converged else f"  failed: {r.failure}"
        print(f"{r.force:>8g} {r.variant:>9} {status}")
    for v in cfg.variants:
        print(f"max converged force {v}: {max_converged_force(records, v):g} MN/m^2")
    print(f"report: {cfg.out}")


if __name__ == "__main__":
    main()

"""Experiment orchestration: weak scaling on the diffusion problem and the force ramp on
the Neo-Hooke beam, with CSV/JSON report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .coarse import build_coarse_basis
from .errors import InvalidArgumentError, NlSchwarzError
from .fem import MaterialParams, NonlinearProblem
from .mesh import decompose, generate_structured_mesh
from .schwarz import VARIANTS, SolverConfig, SolveReport, solve

log = logging.getLogger(__name__)

EXPERIMENTS = ("weak_scaling", "force_ramp")
MN_PER_M2 = 1e6
WALL_CLOCK_FIELDS = ("setup_seconds", "inner_seconds", "coarse_seconds", "gmres_seconds",
                     "other_seconds", "total_seconds")


@dataclass
class ExperimentConfig:
    experiment: str = "weak_scaling"
    problem: str = "diffusion"
    width: float = 1.0
    height: float = 1.0
    cells_per_subdomain: tuple = (20, 20)
    subdomain_grids: list = field(default_factory=lambda: [(2, 2), (4, 4), (8, 8)])
    overlap: int = 1
    variants: list = field(default_factory=lambda: ["one_level", "additive", "hybrid"])
    forces: list = field(default_factory=lambda: [4.0, 4.5, 5.0, 6.0, 7.0, 7.5])  # MN/m^2
    material: MaterialParams = field(default_factory=MaterialParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    workers: int = 1
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidArgumentError(f"unknown experiment {self.experiment!r}")
        if self.problem not in ("diffusion", "neohooke"):
            raise InvalidArgumentError(f"unknown problem {self.problem!r}")
        if self.overlap < 0 or self.workers < 1:
            raise InvalidArgumentError("overlap must be >= 0 and workers >= 1")
        if not self.variants:
            raise InvalidArgumentError("variant list is empty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise InvalidArgumentError(f"unknown variants {bad}; expected a subset of {VARIANTS}")
        if not self.subdomain_grids:
            raise InvalidArgumentError("subdomain grid list is empty")
        if self.format not in ("csv", "json"):
            raise InvalidArgumentError("format must be csv or json")
        if self.experiment == "force_ramp" and not self.forces:
            raise InvalidArgumentError("force list is empty")
        self.cells_per_subdomain = tuple(int(c) for c in self.cells_per_subdomain)
        self.subdomain_grids = [tuple(int(x) for x in g) for g in self.subdomain_grids]

    @classmethod
    def defaults_for(cls, experiment: str, **overrides) -> "ExperimentConfig":
        """Desk-scale defaults of each study; keyword overrides win."""
        if experiment == "force_ramp":
            base = dict(experiment=experiment, problem="neohooke", width=5.0, height=1.0,
                        cells_per_subdomain=(5, 5), subdomain_grids=[(10, 2)],
                        variants=["nks", "additive", "hybrid"],
                        solver=SolverConfig(gmres_max_iter=100, gmres_restart_len=50))
        else:
            base = dict(experiment=experiment)
        base.update(overrides)
        return cls(**base)

    def echo(self) -> dict:
        d = asdict(self)
        d["cells_per_subdomain"] = list(self.cells_per_subdomain)
        d["subdomain_grids"] = [list(g) for g in self.subdomain_grids]
        return d


@dataclass
class RunRecord:
    experiment: str
    problem: str
    variant: str
    grid: str
    n_sub: int
    n_dofs: int
    force: float  # MN/m^2, 0 for diffusion
    overlap: int
    converged: bool
    outer_iters: int
    total_gmres: int
    failure: str
    outer_gmres: str  # per outer iteration, ';'-separated
    residual_norms: str  # ||F(u^k)|| per outer iterate
    alt_residual_norms: str  # ||F_x(u^k)|| per outer iterate
    inner_iters_max: str  # max inner Newton count over subdomains per outer iterate
    coarse_iters: str
    setup_seconds: float
    inner_seconds: float
    coarse_seconds: float
    gmres_seconds: float
    other_seconds: float
    total_seconds: float


def _join(values):
    return ";".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def record_from_report(cfg: ExperimentConfig, variant, grid, problem, force, report,
                       setup_seconds) -> RunRecord:
    its = report.iterations
    ph = report.phase_totals
    return RunRecord(
        experiment=cfg.experiment, problem=cfg.problem, variant=variant,
        grid=f"{grid[0]}x{grid[1]}", n_sub=grid[0] * grid[1], n_dofs=problem.n_dofs,
        force=float(force), overlap=cfg.overlap, converged=bool(report.converged),
        outer_iters=report.outer_iterations, total_gmres=report.total_gmres,
        failure=report.failure or "",
        outer_gmres=_join(r.gmres_iterations for r in its),
        residual_norms=_join(float(r.residual_norm) for r in its),
        alt_residual_norms=_join(float(r.alt_residual_norm) for r in its),
        inner_iters_max=_join(max(r.inner_iterations, default=0) for r in its),
        coarse_iters=_join(r.coarse_iterations for r in its),
        setup_seconds=setup_seconds, inner_seconds=ph.inner, coarse_seconds=ph.coarse,
        gmres_seconds=ph.gmres, other_seconds=ph.other,
        total_seconds=setup_seconds + ph.total,
    )


def _solver_config(cfg: ExperimentConfig, variant) -> SolverConfig:
    return SolverConfig(**{**asdict(cfg.solver), "variant": variant, "overlap": cfg.overlap,
                           "workers": cfg.workers})


def _run_cell(cfg, grid, force_mn, variants):
    cx, cy = cfg.cells_per_subdomain
    mx, my = grid
    dpn = 1 if cfg.problem == "diffusion" else 2
    bc = "all_dirichlet" if cfg.problem == "diffusion" else "beam"
    t0 = time.perf_counter()
    mesh = generate_structured_mesh(cx * mx, cy * my, cfg.width, cfg.height, bc, dpn)
    decomp = decompose(mesh, mx, my, cfg.overlap)
    problem = NonlinearProblem(mesh, cfg.problem, cfg.material, force_mn * MN_PER_M2)
    basis = None
    if any(v != "one_level" for v in variants):
        basis = build_coarse_basis(problem, decomp, workers=cfg.workers)
    shared_setup = time.perf_counter() - t0
    records = []
    for v in variants:
        log.info("%s grid=%dx%d force=%g variant=%s", cfg.experiment, mx, my, force_mn, v)
        t1 = time.perf_counter()
        try:
            _, report = solve(v, problem, decomp, basis if v != "one_level" else None,
                              _solver_config(cfg, v))
        except NlSchwarzError as exc:
            report = SolveReport(v, failure=str(exc))
        setup = shared_setup + (time.perf_counter() - t1) - report.phase_totals.total
        records.append(record_from_report(cfg, v, grid, problem, force_mn, report,
                                          max(setup, 0.0)))
        log.info("  converged=%s outer=%d gmres=%d", report.converged,
                 report.outer_iterations, report.total_gmres)
    return records


def run_weak_scaling(cfg: ExperimentConfig) -> list:
    """One record per (grid, variant): fixed cells per subdomain, growing subdomain grid."""
    if cfg.problem != "diffusion":
        raise InvalidArgumentError("the weak-scaling study runs the diffusion problem")
    records = []
    for grid in cfg.subdomain_grids:
        records.extend(_run_cell(cfg, grid, 0.0, cfg.variants))
    return records


def run_force_ramp(cfg: ExperimentConfig) -> list:
    """One record per (force, variant) on the Neo-Hooke beam."""
    if cfg.problem != "neohooke":
        raise InvalidArgumentError("the force ramp runs the neohooke problem")
    records = []
    for grid in cfg.subdomain_grids:
        for f in cfg.forces:
            records.extend(_run_cell(cfg, grid, float(f), cfg.variants))
    return records


def run_experiment(cfg: ExperimentConfig) -> list:
    if cfg.experiment == "weak_scaling":
        return run_weak_scaling(cfg)
    return run_force_ramp(cfg)


def max_converged_force(records, variant) -> float:
    """Largest force at which ``variant`` converged (0 if never)."""
    forces = [r.force for r in records if r.variant == variant and r.converged]
    return max(forces, default=0.0)


RECORD_FIELDS = [f.name for f in fields(RunRecord)]


def _render_csv(records, config_echo):
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
    writer = csv.DictWriter(buf, fieldnames=RECORD_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        row = asdict(r)
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _render_json(records, config_echo):
    doc = {"config": config_echo, "records": [asdict(r) for r in records]}
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def emit_report(records, path, fmt="csv", config_echo=None) -> Path:
    if not records:
        raise InvalidArgumentError("no records to write")
    if fmt not in ("csv", "json"):
        raise InvalidArgumentError("format must be csv or json")
    text = (_render_csv if fmt == "csv" else _render_json)(records, config_echo or {})
    path = Path(path)
    path.write_text(text)
    return path


def read_json_report(path):
    doc = json.loads(Path(path).read_text())
    return doc["config"], [RunRecord(**r) for r in doc["records"]]


def read_csv_report(path):
    """Parse a CSV report back into ``(config_echo, rows)`` with rows as string dicts."""
    lines = Path(path).read_text().splitlines()
    echo = json.loads(lines[0][len("# config: "):])
    rows = list(csv.DictReader(lines[1:]))
    return echo, rows


def strip_wall_clock(record: RunRecord) -> dict:
    d = asdict(record)
    for k in WALL_CLOCK_FIELDS:
        d.pop(k)
    return d


def seeded_rng(cfg: ExperimentConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)

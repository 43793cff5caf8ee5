"""Nonlinear Schwarz methods (one-level, two-level additive, two-level hybrid) and the
Newton-Krylov-Schwarz baseline.

For a discrete problem F(u) = 0 the local corrections T_i(u) solve
R_i F(u - P_i T_i(u)) = 0 and the coarse correction T_0(u) solves
R_0 F(u - P_0 T_0(u)) = 0 with P_0 = Phi, R_0 = Phi^T. The outer Newton loop is run on

    one_level:  F_1(u) = sum_i P_i T_i(u)
    additive:   F_a(u) = sum_i P_i T_i(u) + P_0 T_0(u)
    hybrid:     F_h(u) = sum_i P_i T_i(u - P_0 T_0(u)) + P_0 T_0(u)

with exact tangents assembled from Q_i(w) = P_i (R_i DF(w) P_i)^-1 R_i DF(w). With
``restricted=True`` the local sums use the partition-of-unity prolongations instead of
P_i, in the residual and, to stay its exact derivative, in the tangent.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .coarse import CoarseBasis
from .errors import (EvaluationError, InnerDivergenceError, InvalidArgumentError,
                     NlSchwarzError, NonFiniteError, StaleStateError)
from .fem import BlockAssembler, NonlinearProblem
from .mesh import Decomposition
from .numerics import DenseLu, LuFactorization, gmres
from .parallel import ordered_map

VARIANTS = ("one_level", "additive", "hybrid", "nks")

# Inner Newton also stops at round-off: below ROUNDOFF_FACTOR * ||scale||, or when a full
# step no longer halves a residual that is already below STAGNATION_FACTOR * ||scale||.
# ``scale`` sums the magnitudes of the element contributions to each residual entry.
ROUNDOFF_FACTOR = 1e3 * np.finfo(float).eps
STAGNATION_FACTOR = np.sqrt(np.finfo(float).eps)


@dataclass
class SolverConfig:
    variant: str = "hybrid"
    restricted: bool = True
    outer_rel_tol: float = 1e-4
    outer_abs_tol: float = 1e-11
    # "original": stop on ||F(u)||, "alternative": stop on ||F_x(u)|| (both are reported)
    outer_norm: str = "original"
    inner_rel_tol: float = 1e-5
    inner_abs_tol: float = 1e-11
    inner_max_iter: int = 20
    gmres_rel_tol: float = 1e-6
    gmres_max_iter: int = 1000
    gmres_max_restarts: int = 20
    gmres_restart_len: int | None = None  # None: ceil(max_iter / max_restarts)
    max_outer_iter: int = 50
    overlap: int = 1
    rebuild_coarse_each_outer: bool = False
    inner_warm_start: bool = False
    safeguard_max_halvings: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown variant {self.variant!r}; expected {VARIANTS}")
        if self.outer_norm not in ("original", "alternative"):
            raise InvalidArgumentError("outer_norm must be 'original' or 'alternative'")
        for name in ("outer_rel_tol", "outer_abs_tol", "inner_rel_tol", "inner_abs_tol",
                     "gmres_rel_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.inner_max_iter < 1 or self.max_outer_iter < 0 or self.gmres_max_iter < 1:
            raise InvalidArgumentError("iteration limits must be positive")
        if self.overlap < 0 or self.safeguard_max_halvings < 0:
            raise InvalidArgumentError("overlap and safeguard_max_halvings must be >= 0")

    @property
    def two_level(self) -> bool:
        return self.variant != "one_level"


@dataclass
class LocalCorrection:
    """T_i at one linearisation point plus the data its tangent block needs."""

    t: np.ndarray
    point: np.ndarray  # u - P_i T_i, full length
    lu: object  # factorisation of R_i DF(point) P_i
    K_rows: object  # rows R_i of DF(point) on the assembler's extended DOFs
    iterations: int
    residual: float


@dataclass
class CorrectionState:
    variant: str
    u: np.ndarray
    local: list
    coarse: LocalCorrection | None = None  # K_rows holds the global DF(u_0)
    base: np.ndarray | None = None  # point the local corrections were computed at
    inner_seconds: float = 0.0
    coarse_seconds: float = 0.0


@dataclass
class PhaseTimes:
    inner: float = 0.0
    coarse: float = 0.0
    gmres: float = 0.0
    other: float = 0.0

    @property
    def total(self) -> float:
        return self.inner + self.coarse + self.gmres + self.other


@dataclass
class IterationRecord:
    """Data for outer iterate u^(k): residual norms there and the work spent on it."""

    k: int
    alt_residual_norm: float  # ||F_x(u^k)||
    residual_norm: float  # ||F(u^k)||
    inner_iterations: list
    coarse_iterations: int
    gmres_iterations: int = 0
    gmres_converged: bool = True
    step_halvings: int = 0
    phases: PhaseTimes = field(default_factory=PhaseTimes)


@dataclass
class SolveReport:
    variant: str
    iterations: list = field(default_factory=list)
    converged: bool = False
    outer_iterations: int = 0
    total_gmres: int = 0
    failure: str | None = None
    setup_seconds: float = 0.0

    @property
    def phase_totals(self) -> PhaseTimes:
        tot = PhaseTimes()
        for rec in self.iterations:
            tot.inner += rec.phases.inner
            tot.coarse += rec.phases.coarse
            tot.gmres += rec.phases.gmres
            tot.other += rec.phases.other
        return tot

    def to_dict(self) -> dict:
        return asdict(self)


class _Subdomain:
    def __init__(self, problem, decomp, i):
        self.index = i
        self.dofs = decomp.local_to_global[i]
        self.owned = decomp.owned_local[i]
        self.assembler = BlockAssembler(problem, self.dofs)
        self.ext = self.assembler.ext_dofs


class NonlinearSchwarz:
    """Residual and tangent machinery of one problem / decomposition / coarse basis."""

    def __init__(self, problem: NonlinearProblem, decomp: Decomposition,
                 basis: CoarseBasis | None, config: SolverConfig):
        if decomp.n_dofs != problem.n_dofs:
            raise InvalidArgumentError(
                f"decomposition has {decomp.n_dofs} DOFs, problem has {problem.n_dofs}")
        if config.two_level and basis is None:
            raise InvalidArgumentError(f"variant {config.variant} needs a coarse basis")
        if basis is not None and basis.Phi.shape[0] != problem.n_dofs:
            raise InvalidArgumentError("coarse basis does not match the problem size")
        self.problem = problem
        self.decomp = decomp
        self.basis = basis
        self.config = config
        self.subdomains = ordered_map(lambda i: _Subdomain(problem, decomp, i),
                                      range(decomp.n_sub), config.workers)
        self.global_assembler = problem.global_assembler
        self._warm = {}

    # -- nonlinear corrections -------------------------------------------------

    def _newton(self, label, n, assemble_at, factor, start=None):
        """Newton on G(t) = R F(u - P t) from ``start`` (default 0).

        ``assemble_at(t)`` returns ``(G, K_rows, J, point, scale)`` with ``J = R DF P``
        and ``scale`` the magnitude vector bounding the round-off in ``G``.
        """
        cfg = self.config
        t = np.zeros(n) if start is None else start.copy()
        G, K_rows, J, point, scale = assemble_at(t)
        g0 = np.linalg.norm(G)
        g = g0
        tol = max(cfg.inner_abs_tol, cfg.inner_rel_tol * g0)
        its = 0
        stalled = False
        while g > max(tol, ROUNDOFF_FACTOR * np.linalg.norm(scale)) and not stalled:
            if its >= cfg.inner_max_iter:
                raise InnerDivergenceError(label, g, its)
            dt = factor(J).solve(G)
            if not np.all(np.isfinite(dt)):
                raise NonFiniteError(f"non-finite Newton update on {label}")
            s = 1.0
            for _ in range(cfg.safeguard_max_halvings + 1):
                try:
                    trial = assemble_at(t + s * dt)
                    if not np.all(np.isfinite(trial[0])):
                        raise NonFiniteError(f"non-finite residual on {label}")
                    break
                except EvaluationError:
                    s *= 0.5
            else:
                raise InnerDivergenceError(label, g, its)
            t = t + s * dt
            G, K_rows, J, point, scale = trial
            g_old, g = g, np.linalg.norm(G)
            stalled = s == 1.0 and g > 0.5 * g_old and g <= STAGNATION_FACTOR * np.linalg.norm(scale)
            its += 1
        return LocalCorrection(t, point, factor(J), K_rows, its, g)

    def local_correction(self, i: int, u) -> LocalCorrection:
        sub = self.subdomains[i]
        u = np.asarray(u, dtype=float)

        def assemble_at(t):
            w = u.copy()
            w[sub.dofs] -= t
            r, K_ext, K_loc, scale = sub.assembler.assemble_with_scale(w)
            return r, K_ext, K_loc, w, scale

        def factor(J):
            return LuFactorization(J, where=f"subdomain {i}")

        start = self._warm.get(i) if self.config.inner_warm_start else None
        corr = self._newton(f"subdomain {i}", len(sub.dofs), assemble_at, factor, start)
        if self.config.inner_warm_start:
            self._warm[i] = corr.t
        return corr

    def coarse_correction(self, u) -> LocalCorrection:
        Phi = self.basis.Phi
        PhiT = Phi.T.tocsr()
        absPhiT = abs(PhiT)
        u = np.asarray(u, dtype=float)

        def assemble_at(c):
            w = u - Phi @ c
            r, K, _, scale = self.global_assembler.assemble_with_scale(w)
            J = (PhiT @ (K @ Phi)).toarray()
            return PhiT @ r, K, J, w, absPhiT @ scale

        def factor(J):
            return DenseLu(J, where="coarse problem")

        return self._newton("coarse problem", Phi.shape[1], assemble_at, factor)

    def _local_corrections(self, u):
        return ordered_map(lambda i: self.local_correction(i, u), range(self.decomp.n_sub),
                           self.config.workers)

    def _prolong_local(self, i, x, out):
        sub = self.subdomains[i]
        if self.config.restricted:
            out[sub.dofs[sub.owned]] += x[sub.owned]
        else:
            out[sub.dofs] += x

    def evaluate_residual(self, u):
        """Return ``(F_x(u), CorrectionState)`` for the configured variant."""
        variant = self.config.variant
        if variant == "nks":
            raise InvalidArgumentError("evaluate_residual is for the nonlinear Schwarz variants")
        u = np.array(u, dtype=float)
        if u.shape != (self.problem.n_dofs,):
            raise InvalidArgumentError(f"u has shape {u.shape}")
        state = CorrectionState(variant, u.copy(), [])
        F = np.zeros_like(u)
        base = u
        if variant in ("additive", "hybrid"):
            t0 = time.perf_counter()
            state.coarse = self.coarse_correction(u)
            state.coarse_seconds = time.perf_counter() - t0
            if variant == "hybrid":
                base = state.coarse.point
        t0 = time.perf_counter()
        state.local = self._local_corrections(base)
        state.inner_seconds = time.perf_counter() - t0
        state.base = base
        for i, corr in enumerate(state.local):
            self._prolong_local(i, corr.t, F)
        if state.coarse is not None:
            F += self.basis.Phi @ state.coarse.t
        return F, state

    # -- tangents ---------------------------------------------------------------

    def _local_solve(self, corr, i, v):
        """(R_i DF(w) P_i)^-1 R_i DF(w) v at the correction's linearisation point."""
        sub = self.subdomains[i]
        return corr.lu.solve(corr.K_rows @ v[sub.ext])

    def apply_q(self, state: CorrectionState, i: int, v, restricted=False) -> np.ndarray:
        """Q_i(u_i) v for subdomain ``i`` (``i = 0`` with ``coarse=True`` is not used here)."""
        corr = state.local[i]
        sub = self.subdomains[i]
        x = self._local_solve(corr, i, np.asarray(v, dtype=float))
        out = np.zeros(self.problem.n_dofs)
        if restricted:
            out[sub.dofs[sub.owned]] += x[sub.owned]
        else:
            out[sub.dofs] += x
        return out

    def apply_q0(self, state: CorrectionState, v) -> np.ndarray:
        """Q_0(u_0) v = Phi (Phi^T K Phi)^-1 Phi^T K v with K = DF(u_0)."""
        c = state.coarse
        Phi = self.basis.Phi
        return Phi @ c.lu.solve(Phi.T @ (c.K_rows @ v))

    def apply_tangent(self, state: CorrectionState, v, u=None) -> np.ndarray:
        if u is not None and not np.array_equal(np.asarray(u), state.u):
            raise StaleStateError("correction state was computed at a different iterate")
        v = np.asarray(v, dtype=float)
        if v.shape != state.u.shape:
            raise InvalidArgumentError(f"direction has shape {v.shape}, expected {state.u.shape}")
        variant = state.variant
        q0 = None
        w = v
        if variant in ("additive", "hybrid"):
            q0 = self.apply_q0(state, v)
            if variant == "hybrid":
                w = v - q0
        parts = ordered_map(lambda i: self._local_solve(state.local[i], i, w),
                            range(self.decomp.n_sub), self.config.workers)
        out = np.zeros_like(v)
        for i, x in enumerate(parts):
            self._prolong_local(i, x, out)
        if q0 is not None:
            out += q0
        return out

    def tangent_operator(self, state: CorrectionState) -> spla.LinearOperator:
        n = self.problem.n_dofs
        return spla.LinearOperator((n, n), matvec=lambda v: self.apply_tangent(state, v),
                                   dtype=float)

    # -- outer loop -------------------------------------------------------------

    def _gmres(self, op, rhs):
        cfg = self.config
        return gmres(op, rhs, cfg.gmres_rel_tol, cfg.gmres_max_iter, cfg.gmres_restart_len,
                     cfg.gmres_max_restarts)

    def _global_residual_norm(self, u):
        return float(np.linalg.norm(self.global_assembler.residual(u)))

    def _monitor(self, rec):
        if self.config.outer_norm == "original":
            return rec.residual_norm
        return rec.alt_residual_norm

    def solve(self, u0=None):
        """Outer Newton iteration on F_x(u) = 0. Returns ``(u, SolveReport)``."""
        cfg = self.config
        report = SolveReport(cfg.variant)
        u = np.zeros(self.problem.n_dofs) if u0 is None else np.array(u0, dtype=float)
        t_rec = time.perf_counter()
        try:
            F, state = self.evaluate_residual(u)
        except NlSchwarzError as exc:
            report.failure = f"initial evaluation failed: {exc}"
            return u, report
        pending = PhaseTimes(inner=state.inner_seconds, coarse=state.coarse_seconds)
        f0 = None
        k = 0
        while True:
            rec = IterationRecord(k, float(np.linalg.norm(F)), self._global_residual_norm(u),
                                  [c.iterations for c in state.local],
                                  state.coarse.iterations if state.coarse else 0,
                                  phases=pending)
            report.iterations.append(rec)
            f0 = self._monitor(rec) if f0 is None else f0
            if _outer_converged(self._monitor(rec), f0, cfg):
                report.converged = True
                self._close(rec, t_rec)
                break
            if k >= cfg.max_outer_iter:
                report.failure = f"no convergence in {cfg.max_outer_iter} outer iterations"
                self._close(rec, t_rec)
                break
            t0 = time.perf_counter()
            try:
                res = self._gmres(self.tangent_operator(state), F)
            except NlSchwarzError as exc:
                report.failure = f"GMRES failed: {exc}"
                self._close(rec, t_rec)
                break
            rec.phases.gmres += time.perf_counter() - t0
            rec.gmres_iterations = res.iterations
            rec.gmres_converged = res.converged
            report.total_gmres += res.iterations
            if not res.converged:
                report.failure = f"GMRES did not converge in {res.iterations} iterations"
                self._close(rec, t_rec)
                break
            step = res.x
            if cfg.rebuild_coarse_each_outer and self.basis is not None:
                self._rebuild_basis(u - step)
            accepted = None
            s = 1.0
            for h in range(cfg.safeguard_max_halvings + 1):
                trial = u - s * step
                try:
                    Fn, st = self.evaluate_residual(trial)
                    if not np.all(np.isfinite(Fn)):
                        raise NonFiniteError("non-finite alternative residual")
                    accepted = (trial, Fn, st)
                    break
                except EvaluationError:
                    s *= 0.5
                    rec.step_halvings = h + 1
            if accepted is None:
                report.failure = "step safeguard exhausted"
                self._close(rec, t_rec)
                break
            u, F, state = accepted
            self._close(rec, t_rec, exclude=state.inner_seconds + state.coarse_seconds)
            t_rec = time.perf_counter() - state.inner_seconds - state.coarse_seconds
            pending = PhaseTimes(inner=state.inner_seconds, coarse=state.coarse_seconds)
            k += 1
            report.outer_iterations = k
        return u, report

    @staticmethod
    def _close(rec, t_start, exclude=0.0):
        wall = time.perf_counter() - t_start - exclude
        p = rec.phases
        p.other = max(0.0, wall - p.inner - p.coarse - p.gmres)

    def _rebuild_basis(self, u):
        from .coarse import build_coarse_basis
        self.basis = build_coarse_basis(self.problem, self.decomp, u, self.config.workers)


def _outer_converged(norm, norm0, cfg):
    return norm <= cfg.outer_abs_tol or norm <= cfg.outer_rel_tol * norm0


class NewtonKrylovSchwarz:
    """Newton on F(u) = 0 with GMRES left-preconditioned by a two-level restricted
    additive Schwarz operator (one-level if no basis is given)."""

    def __init__(self, problem: NonlinearProblem, decomp: Decomposition,
                 basis: CoarseBasis | None, config: SolverConfig):
        if decomp.n_dofs != problem.n_dofs:
            raise InvalidArgumentError("decomposition does not match the problem")
        self.problem = problem
        self.decomp = decomp
        self.basis = basis
        self.config = config
        self.assembler = problem.global_assembler

    def preconditioner(self, K):
        """Return ``(apply, local_seconds, coarse_seconds)`` for M^-1 built from ``K``."""
        d = self.decomp
        cfg = self.config
        t0 = time.perf_counter()
        lus = ordered_map(
            lambda i: LuFactorization(K[d.local_to_global[i]][:, d.local_to_global[i]],
                                      where=f"subdomain {i}"),
            range(d.n_sub), cfg.workers)
        t1 = time.perf_counter()
        coarse_lu = None
        if self.basis is not None:
            Phi = self.basis.Phi
            coarse_lu = DenseLu((Phi.T @ (K @ Phi)).toarray(), where="coarse problem")
        t2 = time.perf_counter()

        def apply(x):
            parts = ordered_map(lambda i: lus[i].solve(x[d.local_to_global[i]]),
                                range(d.n_sub), cfg.workers)
            out = np.zeros_like(x)
            for i, y in enumerate(parts):
                dofs = d.local_to_global[i]
                if cfg.restricted:
                    own = d.owned_local[i]
                    out[dofs[own]] += y[own]
                else:
                    out[dofs] += y
            if coarse_lu is not None:
                out += self.basis.Phi @ coarse_lu.solve(self.basis.Phi.T @ x)
            return out

        return apply, t1 - t0, t2 - t1

    def solve(self, u0=None):
        cfg = self.config
        report = SolveReport("nks")
        n = self.problem.n_dofs
        u = np.zeros(n) if u0 is None else np.array(u0, dtype=float)
        t_rec = time.perf_counter()
        try:
            r, K, _ = self.assembler.assemble(u)
        except NlSchwarzError as exc:
            report.failure = f"initial evaluation failed: {exc}"
            return u, report
        f0 = np.linalg.norm(r)
        k = 0
        while True:
            rnorm = float(np.linalg.norm(r))
            rec = IterationRecord(k, rnorm, rnorm, [], 0)
            report.iterations.append(rec)
            if _outer_converged(rnorm, f0, cfg):
                report.converged = True
                NonlinearSchwarz._close(rec, t_rec)
                break
            if k >= cfg.max_outer_iter:
                report.failure = f"no convergence in {cfg.max_outer_iter} Newton iterations"
                NonlinearSchwarz._close(rec, t_rec)
                break
            try:
                apply_m, t_loc, t_coarse = self.preconditioner(K)
            except NlSchwarzError as exc:
                report.failure = f"preconditioner setup failed: {exc}"
                NonlinearSchwarz._close(rec, t_rec)
                break
            rec.phases.inner += t_loc
            rec.phases.coarse += t_coarse
            t0 = time.perf_counter()
            res = gmres(lambda v: apply_m(K @ v), apply_m(r), cfg.gmres_rel_tol,
                        cfg.gmres_max_iter, cfg.gmres_restart_len, cfg.gmres_max_restarts)
            rec.phases.gmres += time.perf_counter() - t0
            rec.gmres_iterations = res.iterations
            rec.gmres_converged = res.converged
            report.total_gmres += res.iterations
            if not res.converged:
                report.failure = f"GMRES did not converge in {res.iterations} iterations"
                NonlinearSchwarz._close(rec, t_rec)
                break
            accepted = None
            s = 1.0
            for h in range(cfg.safeguard_max_halvings + 1):
                trial = u - s * res.x
                try:
                    rn, Kn, _ = self.assembler.assemble(trial)
                    if not np.all(np.isfinite(rn)):
                        raise NonFiniteError("non-finite residual")
                    accepted = (trial, rn, Kn)
                    break
                except EvaluationError:
                    s *= 0.5
                    rec.step_halvings = h + 1
            if accepted is None:
                report.failure = "step safeguard exhausted"
                NonlinearSchwarz._close(rec, t_rec)
                break
            u, r, K = accepted
            NonlinearSchwarz._close(rec, t_rec)
            t_rec = time.perf_counter()
            k += 1
            report.outer_iterations = k
        return u, report


def solve(variant, problem, decomp, basis, config: SolverConfig | None = None, u0=None):
    """Solve with the given variant; ``config.variant`` is overridden by ``variant``."""
    config = SolverConfig() if config is None else config
    if config.variant != variant:
        config = SolverConfig(**{**asdict(config), "variant": variant})
    if variant == "nks":
        return NewtonKrylovSchwarz(problem, decomp, basis, config).solve(u0)
    return NonlinearSchwarz(problem, decomp, basis, config).solve(u0)


def nks_solve(problem, decomp, basis, config: SolverConfig | None = None, u0=None):
    return solve("nks", problem, decomp, basis, config, u0)

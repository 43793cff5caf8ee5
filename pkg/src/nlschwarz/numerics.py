"""Linear algebra kernels: CSR helpers, sparse/dense LU and restarted GMRES."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BreakdownError, InvalidArgumentError, SingularMatrixError

PIVOT_THRESHOLD = 1e-14


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted, duplicate-free column indices per row."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def _row_scaling(row_norms, where):
    if row_norms.size and row_norms.min() == 0.0:
        raise SingularMatrixError(f"row {int(np.argmin(row_norms))} is zero", where)
    return 1.0 / row_norms


class LuFactorization:
    """Sparse LU with a COLAMD fill-reducing column ordering and partial pivoting.

    Backed by SuperLU. Rows are equilibrated to unit max-norm before factoring, so the
    pivot threshold ``1e-14 * ||A||_inf`` is applied to a matrix whose rows share one
    scale; identity rows from Dirichlet elimination next to stiff elastic rows are then
    not mistaken for vanishing pivots. Immutable after construction, so concurrent
    solves with different right-hand sides are safe.
    """

    def __init__(self, A, where=None):
        A = sp.csr_matrix(A, dtype=float)
        n, m = A.shape
        if n != m:
            raise InvalidArgumentError(f"LU needs a square matrix, got {A.shape}")
        self.n = n
        if A.nnz == 0:
            raise SingularMatrixError("zero matrix", where)
        row_norms = np.asarray(abs(A).max(axis=1).todense()).ravel()
        self._d = _row_scaling(row_norms, where)
        As = sp.csc_matrix(sp.diags(self._d) @ A)
        try:
            self._lu = spla.splu(As, permc_spec="COLAMD", diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc), where) from exc
        pivots = np.abs(self._lu.U.diagonal())
        # ||D A||_inf >= 1 and is at most the row count
        scale = abs(As).sum(axis=1).max()
        if pivots.min() <= PIVOT_THRESHOLD * scale:
            raise SingularMatrixError(
                f"pivot {pivots.min():.3e} below {PIVOT_THRESHOLD:g} * ||A||_inf "
                "of the row-equilibrated matrix", where)

    @property
    def shape(self):
        return (self.n, self.n)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise InvalidArgumentError(f"rhs length {b.shape[0]} != {self.n}")
        d = self._d if b.ndim == 1 else self._d[:, None]
        return self._lu.solve(d * b)


def lu_factorize(A, where=None) -> LuFactorization:
    return LuFactorization(A, where)


def lu_solve(fact: LuFactorization, b) -> np.ndarray:
    return fact.solve(b)


class DenseLu:
    """Partial-pivoting LU of a small dense matrix (the coarse problems), with the same
    row equilibration and pivot threshold as :class:`LuFactorization`."""

    def __init__(self, A, where=None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidArgumentError(f"LU needs a square matrix, got {A.shape}")
        self.n = A.shape[0]
        if not np.all(np.isfinite(A)):
            raise InvalidArgumentError("matrix has non-finite entries")
        self._d = _row_scaling(np.abs(A).max(axis=1), where) if self.n else np.ones(0)
        As = self._d[:, None] * A
        with warnings.catch_warnings():
            # exact zero pivots are reported below as SingularMatrixError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self._lu, self._piv = sla.lu_factor(As, check_finite=False)
        if self.n:
            pivots = np.abs(np.diag(self._lu))
            if pivots.min() <= PIVOT_THRESHOLD * np.abs(As).sum(axis=1).max():
                raise SingularMatrixError("dense matrix is numerically singular", where)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise InvalidArgumentError(f"rhs length {b.shape[0]} != {self.n}")
        d = self._d if b.ndim == 1 else self._d[:, None]
        return sla.lu_solve((self._lu, self._piv), d * b)


def dense_lu_solve(A, b) -> np.ndarray:
    return DenseLu(A).solve(b)


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norms: list = field(default_factory=list)  # estimated, one per iteration + initial
    restarts: int = 0


def _as_matvec(op):
    if callable(op) and not hasattr(op, "shape"):
        return op
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda v: op @ v
    return spla.aslinearoperator(op).matvec


def gmres(op, b, rel_tol=1e-6, max_iter=1000, restart_len=None, max_restarts=20, x0=None
          ) -> GmresResult:
    """Restarted GMRES(m) with classical Gram-Schmidt plus one reorthogonalisation pass.

    ``op`` is anything with a matvec: a sparse/dense matrix, a scipy ``LinearOperator``
    or a plain callable. ``restart_len`` defaults to ``ceil(max_iter / max_restarts)``.
    ``iterations`` counts Arnoldi steps (one operator application each) over all
    cycles. Stops once the estimated residual drops to ``rel_tol * ||b||`` or the
    iteration budget is spent; non-convergence is reported, not raised.
    """
    matvec = _as_matvec(op)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if not np.all(np.isfinite(b)):
        raise InvalidArgumentError("right-hand side is not finite")
    if restart_len is None:
        restart_len = max(1, math.ceil(max_iter / max(1, max_restarts)))
    m = min(restart_len, n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    target = rel_tol * bnorm
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    history = [beta]
    if bnorm == 0.0 or beta <= target:
        return GmresResult(x, 0, True, history)

    total = 0
    cycles = 0
    while True:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        lucky = False
        for j in range(m):
            w = matvec(V[j])
            total += 1
            w0 = np.linalg.norm(w)
            h = V[:j + 1] @ w
            w = w - h @ V[:j + 1]
            h2 = V[:j + 1] @ w
            w = w - h2 @ V[:j + 1]
            h = h + h2
            hn = np.linalg.norm(w)
            H[:j + 1, j] = h
            H[j + 1, j] = hn
            for i in range(j):
                a, c = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * a + sn[i] * c
                H[i + 1, j] = -sn[i] * a + cs[i] * c
            den = math.hypot(H[j, j], H[j + 1, j])
            if den == 0.0:
                raise BreakdownError(f"singular Hessenberg column at iteration {total}")
            cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            history.append(abs(g[j + 1]))
            k = j + 1
            if abs(g[j + 1]) <= target:
                break
            if hn <= 1e-14 * max(w0, 1.0e-300):
                lucky = True
                break
            if total >= max_iter:
                break
            V[j + 1] = w / hn
        y = sla.solve_triangular(H[:k, :k], g[:k])
        x = x + y @ V[:k]
        if abs(g[k]) <= target:
            return GmresResult(x, total, True, history, cycles)
        if lucky:
            raise BreakdownError(
                f"Arnoldi breakdown at iteration {total} with residual {abs(g[k]):.3e}")
        if total >= max_iter or cycles >= max_restarts:
            return GmresResult(x, total, False, history, cycles)
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        cycles += 1
        if beta <= target:
            return GmresResult(x, total, True, history, cycles)


def dump_coo(A, path) -> None:
    """Write ``row col value`` lines (0-based) for the nonzeros of ``A``."""
    A = sp.coo_matrix(A)
    lines = [f"# {A.shape[0]} {A.shape[1]} {A.nnz}"]
    lines.extend(f"{int(i)} {int(j)} {float(v)!r}" for i, j, v in zip(A.row, A.col, A.data))
    Path(path).write_text("\n".join(lines) + "\n")

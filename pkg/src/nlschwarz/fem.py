"""P1 finite element residuals and tangents for the two model problems.

* ``diffusion``: -div((u^2 + 1) grad u) = 1, homogeneous Dirichlet data.
* ``neohooke``: -div P(F) = f_vol with the compressible Neo-Hooke law
  P(F) = mu (F - F^-T) + lambda ln(det F) F^-T, f_vol = (0, -f_x).

All integrals use the one-point (barycentre) rule. Dirichlet DOFs are eliminated
symmetrically after assembly: their rows and columns are replaced by identity rows and
the residual entry becomes ``u_d - g_d`` (``g_d = 0`` throughout).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, NonFiniteError, NonPhysicalDeformationError
from .mesh import Mesh

PROBLEM_KINDS = ("diffusion", "neohooke")


@dataclass(frozen=True)
class MaterialParams:
    E: float = 210e9
    nu: float = 0.3
    # 2 gives the shear modulus E / (2 (1 + nu)); 1 keeps the literal printed coefficient
    piola_mu_denominator: int = 2

    def __post_init__(self):
        if not self.E > 0:
            raise InvalidArgumentError(f"Young's modulus must be positive, got {self.E}")
        if not 0 <= self.nu < 0.5:
            raise InvalidArgumentError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        if self.piola_mu_denominator not in (1, 2):
            raise InvalidArgumentError("piola_mu_denominator must be 1 or 2")

    @property
    def mu(self) -> float:
        return self.E / (self.piola_mu_denominator * (1 + self.nu))

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))


def _inv_det_2x2(F):
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    inv = np.empty_like(F)
    inv[..., 0, 0] = F[..., 1, 1]
    inv[..., 1, 1] = F[..., 0, 0]
    inv[..., 0, 1] = -F[..., 0, 1]
    inv[..., 1, 0] = -F[..., 1, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return inv / det[..., None, None], det


def _check_det(det, element_ids=None):
    bad = ~(det > 0)
    if np.any(bad):
        k = int(np.argmax(bad))
        eid = k if element_ids is None else int(element_ids[k])
        raise NonPhysicalDeformationError(eid, float(np.ravel(det)[k]))


def first_piola(F, mat: MaterialParams) -> np.ndarray:
    """First Piola-Kirchhoff stress for one or a stack of 2x2 deformation gradients."""
    F = np.asarray(F, dtype=float)
    Finv, det = _inv_det_2x2(F)
    _check_det(np.atleast_1d(det))
    FinvT = np.swapaxes(Finv, -1, -2)
    return mat.mu * (F - FinvT) + mat.lam * np.log(det)[..., None, None] * FinvT


def piola_tangent(F, mat: MaterialParams) -> np.ndarray:
    """dP/dF as a (..., 4, 4) matrix; row ``2*i + J`` is P_iJ, column ``2*k + L`` is F_kL."""
    F = np.asarray(F, dtype=float)
    Finv, det = _inv_det_2x2(F)
    _check_det(np.atleast_1d(det))
    return _piola_tangent_from_inv(Finv, np.log(det), mat)


def _piola_tangent_from_inv(Finv, logdet, mat):
    eye = np.eye(2)
    # d(F^-T)_iJ / dF_kL = -Finv_Jk Finv_Li
    dFinvT = -np.einsum("...Jk,...Li->...iJkL", Finv, Finv)
    II = np.einsum("ik,JL->iJkL", eye, eye)
    FinvT_x_FinvT = np.einsum("...Ji,...Lk->...iJkL", Finv, Finv)
    A = (mat.mu * (II - dFinvT)
         + mat.lam * (FinvT_x_FinvT + logdet[..., None, None, None, None] * dFinvT))
    return A.reshape(A.shape[:-4] + (4, 4))


class NonlinearProblem:
    """Residual/tangent provider for one mesh and one model problem.

    ``force`` is f_x in N/m^2 (neohooke only); the body force is (0, -f_x).
    """

    def __init__(self, mesh: Mesh, kind: str = "diffusion", material: MaterialParams | None = None,
                 force: float = 0.0):
        if kind not in PROBLEM_KINDS:
            raise InvalidArgumentError(f"unknown problem kind {kind!r}")
        dpn = 1 if kind == "diffusion" else 2
        if mesh.dofs_per_node != dpn:
            raise InvalidArgumentError(
                f"{kind} needs a mesh with {dpn} dofs per node, got {mesh.dofs_per_node}")
        self.mesh = mesh
        self.kind = kind
        self.material = material if material is not None else MaterialParams()
        self.force = float(force)

        areas = mesh.signed_areas()
        if np.any(areas <= 0):
            raise InvalidArgumentError("mesh contains elements with non-positive area")
        self.areas = areas
        self.grads = _p1_gradients(mesh)
        self.element_dofs = mesh.element_dofs
        self.dirichlet_dofs = mesh.dirichlet_dofs
        self.dirichlet_values = np.zeros(len(self.dirichlet_dofs))
        self.is_dirichlet = np.zeros(mesh.n_dofs, dtype=bool)
        self.is_dirichlet[self.dirichlet_dofs] = True

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_dofs

    @property
    def dofs_per_node(self) -> int:
        return self.mesh.dofs_per_node

    def apply_dirichlet_values(self, u) -> np.ndarray:
        w = np.array(u, dtype=float)
        w[self.dirichlet_dofs] = self.dirichlet_values
        return w

    def element_contributions(self, u, elems):
        """Element residual vectors (m, k) and tangents (m, k, k) for the elements ``elems``.

        ``u`` is a full-length global vector; Dirichlet values are imposed before
        evaluation.
        """
        u = self.apply_dirichlet_values(u)
        if not np.all(np.isfinite(u[self.element_dofs[elems]])):
            raise NonFiniteError("non-finite values in the linearisation point")
        if self.kind == "diffusion":
            return self._diffusion(u, elems)
        return self._neohooke(u, elems)

    def _diffusion(self, u, elems):
        G = self.grads[elems]
        A = self.areas[elems]
        ue = u[self.element_dofs[elems]]
        grad_u = np.einsum("ma,maj->mj", ue, G)
        uc = ue.mean(axis=1)
        coef = uc * uc + 1.0
        G_grad_u = np.einsum("maj,mj->ma", G, grad_u)
        re = A[:, None] * (coef[:, None] * G_grad_u - 1.0 / 3.0)
        GG = np.einsum("maj,mbj->mab", G, G)
        ke = A[:, None, None] * (coef[:, None, None] * GG
                                 + (2.0 * uc / 3.0)[:, None, None] * G_grad_u[:, :, None])
        return re, ke

    def _neohooke(self, u, elems):
        G = self.grads[elems]
        A = self.areas[elems]
        m = len(elems)
        ue = u[self.element_dofs[elems]].reshape(m, 3, 2)
        F = np.eye(2) + np.einsum("mai,maJ->miJ", ue, G)
        Finv, det = _inv_det_2x2(F)
        _check_det(det, elems)
        FinvT = np.swapaxes(Finv, -1, -2)
        logdet = np.log(det)
        mat = self.material
        P = mat.mu * (F - FinvT) + mat.lam * logdet[:, None, None] * FinvT
        body = np.array([0.0, -self.force])
        re = A[:, None, None] * (np.einsum("miJ,maJ->mai", P, G) - body / 3.0)
        Atan = _piola_tangent_from_inv(Finv, logdet, mat).reshape(m, 2, 2, 2, 2)
        ke = A[:, None, None, None, None] * np.einsum("miJkL,maJ,mbL->maibk", Atan, G, G)
        return re.reshape(m, 6), ke.reshape(m, 6, 6)

    @cached_property
    def global_assembler(self) -> "BlockAssembler":
        return BlockAssembler(self, np.arange(self.n_dofs))


def _p1_gradients(mesh: Mesh) -> np.ndarray:
    p = mesh.node_coords[mesh.elements]  # (m, 3, 2)
    # rows of inv([[x1-x0, x2-x0], [y1-y0, y2-y0]]) give grad phi_1, grad phi_2
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    Jinv = np.linalg.inv(J)
    g12 = Jinv  # g12[m, a-1, :] = grad phi_a
    g0 = -g12.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g12], axis=1)


def assemble(problem: NonlinearProblem, u, element_set=None, apply_dirichlet=True):
    """Global residual and CSR tangent, summed over ``element_set`` (default: all elements).

    With ``apply_dirichlet`` the Dirichlet elimination is applied afterwards.
    """
    n = problem.n_dofs
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise InvalidArgumentError(f"u has shape {u.shape}, expected ({n},)")
    elems = (np.arange(problem.mesh.n_elements) if element_set is None
             else np.asarray(element_set, dtype=np.int64))
    re, ke = problem.element_contributions(u, elems)
    dofs = problem.element_dofs[elems]
    k = dofs.shape[1]
    r = np.bincount(dofs.ravel(), weights=re.ravel(), minlength=n)
    I = np.repeat(dofs, k, axis=1).ravel()
    J = np.tile(dofs, (1, k)).ravel()
    K = sp.csr_matrix((ke.ravel(), (I, J)), shape=(n, n))
    K.sum_duplicates()
    if apply_dirichlet:
        r, K = _eliminate_dirichlet(problem, u, r, K)
    return r, K


def _eliminate_dirichlet(problem, u, r, K):
    d = problem.dirichlet_dofs
    r = r.copy()
    r[d] = u[d] - problem.dirichlet_values
    K = K.tocoo()
    keep = ~(problem.is_dirichlet[K.row] | problem.is_dirichlet[K.col])
    rows = np.concatenate([K.row[keep], d])
    cols = np.concatenate([K.col[keep], d])
    vals = np.concatenate([K.data[keep], np.ones(len(d))])
    n = problem.n_dofs
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    K.sum_duplicates()
    return r, K


class BlockAssembler:
    """Rows ``row_dofs`` of the Dirichlet-eliminated residual and tangent.

    The element set is every element touching a row node, so the selected rows are
    complete. Columns live on ``ext_dofs`` (all DOFs of those elements). The sparsity
    pattern and scatter maps are computed once; :meth:`assemble` only evaluates element
    kernels and accumulates.
    """

    def __init__(self, problem: NonlinearProblem, row_dofs):
        self.problem = problem
        row_dofs = np.asarray(row_dofs, dtype=np.int64)
        n = problem.n_dofs
        is_row = np.zeros(n, dtype=bool)
        is_row[row_dofs] = True
        edofs = problem.element_dofs
        self.elements = np.flatnonzero(is_row[edofs].any(axis=1))
        eld = edofs[self.elements]
        self.ext_dofs = np.unique(eld)
        self.row_dofs = np.sort(row_dofs)
        if len(self.row_dofs) != len(row_dofs) or np.any(self.row_dofs != row_dofs):
            raise InvalidArgumentError("row_dofs must be sorted and unique")
        self.row_pos = np.searchsorted(self.ext_dofs, self.row_dofs)  # rows inside ext
        nr, nx = len(self.row_dofs), len(self.ext_dofs)
        row_index = np.full(n, -1, dtype=np.int64)
        row_index[self.row_dofs] = np.arange(nr)
        ext_index = np.searchsorted(self.ext_dofs, eld)  # (m, k) column index in ext
        k = eld.shape[1]
        I_row = row_index[np.repeat(eld, k, axis=1).ravel()]
        J_glob = np.tile(eld, (1, k)).ravel()
        J_ext = np.tile(ext_index, (1, k)).ravel()

        is_dir = problem.is_dirichlet
        I_glob = np.repeat(eld, k, axis=1).ravel()
        take = (I_row >= 0) & ~is_dir[I_glob] & ~is_dir[J_glob]
        self._take = np.flatnonzero(take)
        # Dirichlet rows: identity at the diagonal only
        self._dir_rows = np.flatnonzero(is_dir[self.row_dofs])
        dir_cols_ext = self.row_pos[self._dir_rows]
        dir_value = np.zeros(n)
        dir_value[problem.dirichlet_dofs] = problem.dirichlet_values
        self._dir_values = dir_value[self.row_dofs[self._dir_rows]]
        I_all = np.concatenate([I_row[take], self._dir_rows])
        J_all = np.concatenate([J_ext[take], dir_cols_ext])
        self._ext_csr = self._pattern(I_all, J_all, nr, nx)
        col_in_rows = np.full(nx, -1, dtype=np.int64)
        col_in_rows[self.row_pos] = np.arange(nr)
        J_rr = col_in_rows[J_all]
        in_rr = np.flatnonzero(J_rr >= 0)
        self._rr_sel = in_rr
        self._rr_csr = self._pattern(I_all[in_rr], J_rr[in_rr], nr, nr)
        self._n_take = len(self._take)

        res_index = row_index[eld].ravel()
        self._res_mask = res_index >= 0
        self._res_index = res_index[self._res_mask]

    @staticmethod
    def _pattern(I, J, nr, nc):
        key = I * nc + J
        uniq, inv = np.unique(key, return_inverse=True)
        indices = (uniq % nc).astype(np.int32)
        rows = uniq // nc
        indptr = np.zeros(nr + 1, dtype=np.int32)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr).astype(np.int32)
        return {"inv": inv, "indices": indices, "indptr": indptr, "shape": (nr, nc),
                "nnz": len(uniq)}

    @staticmethod
    def _build(pat, values):
        data = np.bincount(pat["inv"], weights=values, minlength=pat["nnz"])
        return sp.csr_matrix((data, pat["indices"], pat["indptr"]), shape=pat["shape"])

    def residual(self, u):
        re, _ = self.problem.element_contributions(u, self.elements)
        return self._residual_from(u, re)

    def _residual_from(self, u, re):
        r = np.bincount(self._res_index, weights=re.ravel()[self._res_mask],
                        minlength=len(self.row_dofs))
        if len(self._dir_rows):
            d = self.row_dofs[self._dir_rows]
            r[self._dir_rows] = np.asarray(u)[d] - self._dir_values
        return r

    def assemble(self, u):
        """Return ``(r_rows, K_rows_ext, K_rows_rows)``."""
        return self.assemble_with_scale(u)[:3]

    def assemble_with_scale(self, u):
        """Like :meth:`assemble`, plus the row vector of summed absolute element
        contributions, which bounds the round-off level of the residual."""
        re, ke = self.problem.element_contributions(u, self.elements)
        r = self._residual_from(u, re)
        scale = np.bincount(self._res_index, weights=np.abs(re).ravel()[self._res_mask],
                            minlength=len(self.row_dofs))
        vals = np.concatenate([ke.ravel()[self._take], np.ones(len(self._dir_rows))])
        K_ext = self._build(self._ext_csr, vals)
        K_rr = self._build(self._rr_csr, vals[self._rr_sel])
        return r, K_ext, K_rr, scale

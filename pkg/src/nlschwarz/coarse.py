"""RGDSW coarse space with inverse-distance interface values.

The interface is read off the nonoverlapping partition. Vertices (nodes shared by at
least three subdomains) carry one coarse function each, per displacement component.
On an interface edge the value of vertex ``v``'s function at node ``x`` is

    (1 / d(x, v)) / sum_{a in anchors} (1 / d(x, a))

where the anchors are the edge's end vertices plus its endpoint on the Dirichlet
boundary, if any. A Dirichlet anchor only enters the denominator, so the functions
decay towards the Dirichlet boundary. Interior values come from the discrete harmonic
extension with respect to a tangent matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CoarseSpaceError, InvalidArgumentError
from .mesh import DIRICHLET, Decomposition, Mesh
from .numerics import LuFactorization
from .parallel import ordered_map


@dataclass(frozen=True, eq=False)
class EdgeComponent:
    nodes: np.ndarray
    subdomains: tuple
    vertices: tuple  # adjacent vertex nodes
    dirichlet_ends: tuple  # adjacent Dirichlet nodes on the same interface line

    @property
    def touches_dirichlet(self) -> bool:
        return bool(self.dirichlet_ends)


@dataclass(frozen=True, eq=False)
class InterfaceClassification:
    multiplicity: np.ndarray  # per node, from the nonoverlapping partition
    interface_nodes: np.ndarray
    vertex_nodes: np.ndarray
    edges: list

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_nodes)


@dataclass(frozen=True, eq=False)
class CoarseBasis:
    Phi: sp.csr_matrix  # n x n0, column dofs_per_node * j + c for vertex j, component c
    vertex_nodes: np.ndarray
    dofs_per_node: int

    @property
    def n0(self) -> int:
        return self.Phi.shape[1]


def node_subdomain_incidence(decomp: Decomposition) -> sp.csr_matrix:
    mesh = decomp.mesh
    rows, cols = [], []
    for i, es in enumerate(decomp.nonoverlap_elements):
        nodes = np.unique(mesh.elements[es])
        rows.append(nodes)
        cols.append(np.full(len(nodes), i))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)),
                         shape=(mesh.n_nodes, decomp.n_sub))


def node_adjacency(mesh: Mesh) -> sp.csr_matrix:
    """Symmetric node graph of the triangle edges."""
    e = mesh.elements
    pairs = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
    A = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                      shape=(mesh.n_nodes, mesh.n_nodes))
    A = (A + A.T).tocsr()
    A.data[:] = 1.0
    return A


def classify_interface(decomp: Decomposition, mesh: Mesh | None = None) -> InterfaceClassification:
    """Vertices and edge components of the interface of the nonoverlapping partition.

    Edge components are connected pieces of the non-vertex interface nodes that share
    the same set of subdomains.
    """
    mesh = decomp.mesh if mesh is None else mesh
    S = node_subdomain_incidence(decomp)
    mult = np.asarray(S.sum(axis=1)).ravel().astype(np.int64)
    dirichlet = mesh.boundary_tag == DIRICHLET
    interface = (mult >= 2) & ~dirichlet
    vertex = interface & (mult >= 3)
    edge_nodes = np.flatnonzero(interface & ~vertex)

    sets = [tuple(S.indices[S.indptr[n]:S.indptr[n + 1]]) for n in range(mesh.n_nodes)]
    adj = node_adjacency(mesh)

    edges = []
    if len(edge_nodes):
        labels = {}
        for n in edge_nodes:
            labels.setdefault(sets[n], len(labels))
        sig = np.array([labels[sets[n]] for n in edge_nodes])
        sub = adj[edge_nodes][:, edge_nodes].tocoo()
        same = sig[sub.row] == sig[sub.col]
        G = sp.coo_matrix((np.ones(same.sum()), (sub.row[same], sub.col[same])),
                          shape=(len(edge_nodes),) * 2)
        ncomp, comp = connected_components(G, directed=False)
        # order components by their smallest node for reproducibility
        first = np.full(ncomp, np.iinfo(np.int64).max)
        np.minimum.at(first, comp, edge_nodes)
        for c in np.argsort(first):
            nodes = np.sort(edge_nodes[comp == c])
            cset = set(sets[nodes[0]])
            nbrs = np.unique(adj[nodes].indices)
            verts = tuple(int(v) for v in nbrs if vertex[v] and cset <= set(sets[v]))
            dends = tuple(int(v) for v in nbrs
                          if dirichlet[v] and mult[v] >= 2 and cset <= set(sets[v]))
            edges.append(EdgeComponent(nodes, tuple(sorted(cset)), verts, dends))
    return InterfaceClassification(mult, np.flatnonzero(interface), np.flatnonzero(vertex), edges)


def interface_values_option22(classification: InterfaceClassification, mesh: Mesh
                              ) -> sp.csr_matrix:
    """Node-level interface block: (n_nodes x n_vertices), nonzero only on interface nodes."""
    verts = classification.vertex_nodes
    if len(verts) == 0:
        raise CoarseSpaceError(
            "the partition has no vertex nodes (multiplicity >= 3); RGDSW needs a 2D "
            "subdomain layout")
    col_of = {int(v): j for j, v in enumerate(verts)}
    X = mesh.node_coords
    rows = list(verts)
    cols = list(range(len(verts)))
    vals = [1.0] * len(verts)
    for edge in classification.edges:
        if not edge.vertices:
            raise CoarseSpaceError(
                f"edge component at nodes {edge.nodes[:3].tolist()}... has no adjacent "
                "vertex and would be left without a coarse function")
        anchors = list(edge.vertices) + list(edge.dirichlet_ends)
        d = np.linalg.norm(X[edge.nodes][:, None, :] - X[anchors][None, :, :], axis=2)
        inv = 1.0 / d
        w = inv / inv.sum(axis=1, keepdims=True)
        for k, v in enumerate(edge.vertices):
            rows.extend(edge.nodes.tolist())
            cols.extend([col_of[v]] * len(edge.nodes))
            vals.extend(w[:, k].tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, len(verts)))


def _expand_to_dofs(block: sp.csr_matrix, dpn: int) -> sp.csr_matrix:
    if dpn == 1:
        return block.tocsr()
    return sp.kron(block, sp.identity(dpn), format="csr")


def extend_interior(interface_block, K, decomp: Decomposition,
                    classification: InterfaceClassification, workers=1) -> CoarseBasis:
    """Discrete harmonic extension of the interface values into subdomain interiors.

    Solves ``K_II Phi_I = -K_IG Phi_G`` one subdomain at a time; ``I`` are the
    non-interface, non-Dirichlet DOFs of the subdomain, ``G`` the interface DOFs.
    """
    mesh = decomp.mesh
    dpn = decomp.dofs_per_node
    K = sp.csr_matrix(K)
    if K.shape != (decomp.n_dofs, decomp.n_dofs):
        raise InvalidArgumentError(f"tangent has shape {K.shape}, expected {decomp.n_dofs}^2")
    Phi_G = _expand_to_dofs(sp.csr_matrix(interface_block), dpn)
    gamma_dofs = mesh.node_dofs(classification.interface_nodes)
    Phi_G = Phi_G[gamma_dofs]
    K_G = K[:, gamma_dofs]
    dirichlet = mesh.boundary_tag == DIRICHLET
    mult = classification.multiplicity

    def solve_one(i):
        nodes = np.unique(mesh.elements[decomp.nonoverlap_elements[i]])
        nodes = nodes[(mult[nodes] == 1) & ~dirichlet[nodes]]
        if len(nodes) == 0:
            return None
        dofs = mesh.node_dofs(nodes)
        lu = LuFactorization(K[dofs][:, dofs], where=f"interior block of subdomain {i}")
        rhs = -(K_G[dofs] @ Phi_G).toarray()
        return dofs, lu.solve(rhs)

    parts = ordered_map(solve_one, range(decomp.n_sub), workers)
    n0 = Phi_G.shape[1]
    G = Phi_G.tocoo()
    rows, cols, vals = [gamma_dofs[G.row]], [G.col], [G.data]
    for part in parts:
        if part is not None:
            dofs, X = part
            rows.append(np.repeat(dofs, n0))
            cols.append(np.tile(np.arange(n0), len(dofs)))
            vals.append(X.ravel())
    Phi = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(decomp.n_dofs, n0))
    Phi.eliminate_zeros()
    Phi.sort_indices()
    return CoarseBasis(Phi, classification.vertex_nodes, dpn)


def build_coarse_basis(problem, decomp: Decomposition, u=None, workers=1) -> CoarseBasis:
    """RGDSW basis extended with the tangent of ``problem`` at ``u`` (default zero)."""
    from .fem import assemble

    u = np.zeros(problem.n_dofs) if u is None else u
    _, K = assemble(problem, u)
    classification = classify_interface(decomp, problem.mesh)
    block = interface_values_option22(classification, problem.mesh)
    return extend_interior(block, K, decomp, classification, workers)


def _check(basis, n):
    if basis.Phi.shape[0] != n:
        raise InvalidArgumentError(f"vector length {n} != basis rows {basis.Phi.shape[0]}")


def coarse_restrict(basis: CoarseBasis, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    _check(basis, v.shape[0])
    return basis.Phi.T @ v


def coarse_prolong(basis: CoarseBasis, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape[0] != basis.n0:
        raise InvalidArgumentError(f"coarse vector length {c.shape[0]} != {basis.n0}")
    return basis.Phi @ c


def galerkin(basis: CoarseBasis, K) -> np.ndarray:
    _check(basis, K.shape[0])
    return np.asarray((basis.Phi.T @ (K @ basis.Phi)).todense())

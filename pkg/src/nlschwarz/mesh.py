"""Structured P1 triangulations, dual graphs and element-based overlapping decompositions.

Degrees of freedom are numbered node-major: DOF ``d * node + c`` is component ``c``
of node ``node`` for a mesh with ``d`` DOFs per node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

TAG_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}

BC_SPECS = ("all_dirichlet", "beam")


@dataclass(frozen=True, eq=False)
class Mesh:
    node_coords: np.ndarray  # (n_nodes, 2)
    elements: np.ndarray  # (n_elements, 3), counterclockwise
    boundary_tag: np.ndarray  # (n_nodes,) INTERIOR / DIRICHLET / NEUMANN
    dofs_per_node: int = 1
    nx: int = 0
    ny: int = 0
    width: float = 1.0
    height: float = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        return self.dofs_per_node * self.n_nodes

    def node_dofs(self, nodes) -> np.ndarray:
        """DOF indices of ``nodes`` in node-major order."""
        nodes = np.asarray(nodes, dtype=np.int64)
        d = self.dofs_per_node
        return (d * nodes[:, None] + np.arange(d)[None, :]).ravel()

    @property
    def element_dofs(self) -> np.ndarray:
        """(n_elements, 3 * dofs_per_node) DOF indices per element."""
        d = self.dofs_per_node
        return (d * self.elements[:, :, None] + np.arange(d)).reshape(self.n_elements, 3 * d)

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        return self.node_dofs(np.flatnonzero(self.boundary_tag == DIRICHLET))

    def signed_areas(self) -> np.ndarray:
        p = self.node_coords[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.node_coords[self.elements].mean(axis=1)

    def with_dofs_per_node(self, dofs_per_node: int) -> "Mesh":
        return Mesh(self.node_coords, self.elements, self.boundary_tag, dofs_per_node,
                    self.nx, self.ny, self.width, self.height)


def generate_structured_mesh(nx, ny, width=1.0, height=1.0, bc_spec="all_dirichlet",
                             dofs_per_node=1) -> Mesh:
    """Uniform ``nx`` x ``ny`` grid on ``[0, width] x [0, height]``, each cell cut along
    its lower-left to upper-right diagonal.

    ``bc_spec`` is ``"all_dirichlet"`` (whole boundary Dirichlet) or ``"beam"``
    (left and right edges Dirichlet, top and bottom Neumann).
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"cell counts must be positive integers, got {nx}x{ny}")
    if not (width > 0 and height > 0):
        raise InvalidArgumentError(f"domain size must be positive, got {width}x{height}")
    if bc_spec not in BC_SPECS:
        raise InvalidArgumentError(f"unknown bc_spec {bc_spec!r}; expected one of {BC_SPECS}")
    if dofs_per_node not in (1, 2):
        raise InvalidArgumentError("dofs_per_node must be 1 or 2")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j is y_j
    coords = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    # element 2c is the lower triangle of cell c, 2c+1 the upper one
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    ii, jj = ii.ravel(), jj.ravel()
    left, right = ii == 0, ii == nx
    bottom, top = jj == 0, jj == ny
    tag = np.full(len(coords), INTERIOR, dtype=np.int8)
    if bc_spec == "all_dirichlet":
        tag[left | right | bottom | top] = DIRICHLET
    else:
        tag[bottom | top] = NEUMANN
        tag[left | right] = DIRICHLET
    return Mesh(coords, elements, tag, dofs_per_node, nx, ny, float(width), float(height))


@dataclass(frozen=True, eq=False)
class DualGraph:
    """Element adjacency by shared mesh node, stored as CSR arrays."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_elements(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, e: int) -> np.ndarray:
        return self.indices[self.indptr[e]:self.indptr[e + 1]]

    def matrix(self) -> sp.csr_matrix:
        n = self.n_elements
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))


def element_node_incidence(mesh: Mesh) -> sp.csr_matrix:
    ne = mesh.n_elements
    rows = np.repeat(np.arange(ne), 3)
    return sp.csr_matrix((np.ones(3 * ne), (rows, mesh.elements.ravel())),
                         shape=(ne, mesh.n_nodes))


def build_dual_graph(mesh: Mesh) -> DualGraph:
    B = element_node_incidence(mesh)
    A = (B @ B.T).tocsr()
    A.setdiag(0)
    A.eliminate_zeros()
    A.sort_indices()
    return DualGraph(A.indptr.astype(np.int64), A.indices.astype(np.int64))


@dataclass(frozen=True, eq=False)
class Decomposition:
    mesh: Mesh = field(repr=False)
    n_sub: int
    nonoverlap_elements: list
    overlap_elements: list
    overlap_nodes: list
    owner: np.ndarray
    local_to_global: list
    overlap_width: int
    n_dofs: int
    dofs_per_node: int
    # per subdomain: boolean mask over local DOFs whose node is owned by that subdomain
    owned_local: list = field(repr=False)

    def local_size(self, i: int) -> int:
        return len(self.local_to_global[i])


def _node_sets(mesh, element_sets):
    return [np.unique(mesh.elements[es]) for es in element_sets]


def _make_decomposition(mesh, nonoverlap, overlap, delta, owner=None):
    overlap_nodes = _node_sets(mesh, overlap)
    if owner is None:
        owner = np.full(mesh.n_nodes, -1, dtype=np.int64)
        # reverse order so the lowest subdomain index wins ties
        for i in reversed(range(len(nonoverlap))):
            owner[np.unique(mesh.elements[nonoverlap[i]])] = i
    l2g = [mesh.node_dofs(nodes) for nodes in overlap_nodes]
    d = mesh.dofs_per_node
    owned = [np.repeat(owner[nodes] == i, d) for i, nodes in enumerate(overlap_nodes)]
    return Decomposition(mesh, len(nonoverlap), nonoverlap, overlap, overlap_nodes, owner, l2g,
                         int(delta), mesh.n_dofs, d, owned)


def partition_structured(mesh: Mesh, mx: int, my: int) -> Decomposition:
    """Block partition of a structured mesh into ``mx * my`` subdomains (no overlap).

    Subdomain ``sy * mx + sx`` owns the cell block in column ``sx`` and row ``sy``.
    """
    if mx < 1 or my < 1 or mesh.nx % mx or mesh.ny % my:
        raise InvalidArgumentError(
            f"subdomain grid {mx}x{my} does not divide the {mesh.nx}x{mesh.ny} cell grid")
    bx, by = mesh.nx // mx, mesh.ny // my
    cells = np.arange(mesh.nx * mesh.ny)
    ci, cj = cells % mesh.nx, cells // mesh.nx
    sub_of_cell = (cj // by) * mx + ci // bx
    sub_of_elem = np.repeat(sub_of_cell, 2)
    order = np.argsort(sub_of_elem, kind="stable")
    counts = np.bincount(sub_of_elem, minlength=mx * my)
    nonoverlap = np.split(order, np.cumsum(counts)[:-1])
    nonoverlap = [np.sort(es) for es in nonoverlap]
    return _make_decomposition(mesh, nonoverlap, list(nonoverlap), 0)


def add_overlap(decomp: Decomposition, dual_graph: DualGraph, delta: int) -> Decomposition:
    """Grow every subdomain by ``delta`` layers of dual-graph neighbours.

    Ownership (and hence the partition of unity) is inherited from ``decomp``.
    """
    if delta < 0:
        raise InvalidArgumentError("overlap must be >= 0")
    A = dual_graph.matrix()
    overlap = []
    for es in decomp.nonoverlap_elements:
        mask = np.zeros(dual_graph.n_elements)
        mask[es] = 1.0
        for _ in range(delta):
            mask = mask + A @ mask
            mask = (mask > 0).astype(float)
        overlap.append(np.flatnonzero(mask))
    return _make_decomposition(decomp.mesh, decomp.nonoverlap_elements, overlap, delta,
                               owner=decomp.owner)


def decompose(mesh: Mesh, mx: int, my: int, delta: int = 1) -> Decomposition:
    """Block partition plus ``delta`` element layers of overlap."""
    base = partition_structured(mesh, mx, my)
    if delta == 0:
        return base
    return add_overlap(base, build_dual_graph(mesh), delta)


def _check_len(v, n, what):
    v = np.asarray(v)
    if v.shape != (n,):
        raise InvalidArgumentError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def restrict(decomp: Decomposition, i: int, global_vector) -> np.ndarray:
    v = _check_len(global_vector, decomp.n_dofs, "global vector")
    return v[decomp.local_to_global[i]]


def prolong(decomp: Decomposition, i: int, local_vector, out=None) -> np.ndarray:
    """Scatter-add a local vector into a (new or given) global vector."""
    w = _check_len(local_vector, decomp.local_size(i), "local vector")
    if out is None:
        out = np.zeros(decomp.n_dofs, dtype=np.result_type(w, float))
    out[decomp.local_to_global[i]] += w
    return out


def prolong_restricted(decomp: Decomposition, i: int, local_vector, out=None) -> np.ndarray:
    """Like :func:`prolong` but only DOFs owned by subdomain ``i`` are kept."""
    w = _check_len(local_vector, decomp.local_size(i), "local vector")
    if out is None:
        out = np.zeros(decomp.n_dofs, dtype=np.result_type(w, float))
    mask = decomp.owned_local[i]
    out[decomp.local_to_global[i][mask]] += w[mask]
    return out


def dump_mesh(mesh: Mesh, path) -> None:
    """Write a plain-text listing: a header, one ``x y tag`` line per node, then one
    ``a b c`` line per element."""
    lines = [f"# nlschwarz mesh: {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
             f"{mesh.dofs_per_node} dofs/node",
             f"nodes {mesh.n_nodes}"]
    for (x, y), t in zip(mesh.node_coords, mesh.boundary_tag):
        lines.append(f"{float(x)!r} {float(y)!r} {TAG_NAMES[int(t)]}")
    lines.append(f"elements {mesh.n_elements}")
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.elements)
    Path(path).write_text("\n".join(lines) + "\n")

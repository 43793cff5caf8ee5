"""Independent reference implementations used by the tests.

Everything here is written from the model equations directly, with dense arrays and
plain loops where that keeps it obviously correct. Jacobians come from complex-step
differentiation of the residual, so they never share code with the analytic tangents.
"""

import functools

import numpy as np

from nlschwarz.mesh import DIRICHLET


# ---------------------------------------------------------------- linear algebra

def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting on a dense copy."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]] = A[[p, k]]
        b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in reversed(range(n)):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


# ---------------------------------------------------------------- mesh oracles

def brute_force_dual_graph(elements):
    """Adjacency lists: elements sharing at least one node."""
    sets = [set(e) for e in elements]
    return [sorted(j for j in range(len(sets)) if j != i and sets[i] & sets[j])
            for i in range(len(sets))]


def centroid_partition(mesh, mx, my):
    """Subdomain index of every element from its centroid position."""
    c = mesh.node_coords[mesh.elements].mean(axis=1)
    sx = np.minimum((c[:, 0] / mesh.width * mx).astype(int), mx - 1)
    sy = np.minimum((c[:, 1] / mesh.height * my).astype(int), my - 1)
    return sy * mx + sx


def bfs_overlap(elements, seed, delta):
    """Elements within ``delta`` node-sharing steps of ``seed``."""
    adj = brute_force_dual_graph(elements)
    current = set(int(e) for e in seed)
    for _ in range(delta):
        current |= {j for e in current for j in adj[e]}
    return np.array(sorted(current))


# ---------------------------------------------------------------- residual oracles

def _gradients(coords):
    # phi_a(x, y) = c0 + c1 x + c2 y with phi_a(node_b) = delta_ab
    M = np.column_stack([np.ones(3), coords])
    C = np.linalg.inv(M)
    return C[1:, :].T, 0.5 * abs(np.linalg.det(M))


@functools.lru_cache(maxsize=32)
def element_geometry(mesh):
    G, A = zip(*(_gradients(mesh.node_coords[e]) for e in mesh.elements))
    return np.array(G), np.array(A)


def _free(mesh, u):
    mask = np.repeat(mesh.boundary_tag == DIRICHLET, mesh.dofs_per_node)
    w = np.array(u, dtype=complex if np.iscomplexobj(u) else float)
    w[mask] = 0.0
    return w, mask


def diffusion_residual(mesh, u, geom=None):
    """-div((u^2+1) grad u) = 1 with a barycentre rule, Dirichlet rows ``u_d``."""
    G, A = geom if geom is not None else element_geometry(mesh)
    w, mask = _free(mesh, u)
    E = mesh.elements
    ue = w[E]  # (m, 3)
    grad = (ue[:, :, None] * G).sum(axis=1)  # (m, 2)
    k = 1.0 + ue.mean(axis=1) ** 2
    contrib = A[:, None] * (k[:, None] * (G * grad[:, None, :]).sum(axis=2) - 1.0 / 3.0)
    r = np.zeros(len(w), dtype=w.dtype)
    np.add.at(r, E.ravel(), contrib.ravel())
    r[mask] = np.asarray(u)[mask]
    return r


def piola_direct(F, mu, lam):
    """P = mu (F - F^-T) + lam ln(J) F^-T written out component-wise.

    ``F`` is (2, 2) or a stack (..., 2, 2)."""
    a, b, c, d = F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1]
    J = a * d - b * c
    FinvT = np.stack([np.stack([d, -c], -1), np.stack([-b, a], -1)], -2) / J[..., None, None]
    return mu * (F - FinvT) + lam * np.log(J)[..., None, None] * FinvT


def neohooke_residual(mesh, u, mu, lam, force, geom=None):
    G, A = geom if geom is not None else element_geometry(mesh)
    w, mask = _free(mesh, u)
    E = mesh.elements
    ue = np.stack([w[2 * E], w[2 * E + 1]], axis=-1)  # (m, 3 nodes, 2 components)
    F = np.eye(2) + np.einsum("mai,maJ->miJ", ue, G)
    P = piola_direct(F, mu, lam)
    body = np.array([0.0, -force])
    contrib = A[:, None, None] * (np.einsum("miJ,maJ->mai", P, G) - body / 3.0)
    r = np.zeros(len(w), dtype=w.dtype)
    np.add.at(r, 2 * E.ravel(), contrib[..., 0].ravel())
    np.add.at(r, 2 * E.ravel() + 1, contrib[..., 1].ravel())
    r[mask] = np.asarray(u)[mask]
    return r


def diffusion_residual_loop(mesh, u):
    """Element-by-element loop version, kept as a cross-check of the vectorised one."""
    G, A = element_geometry(mesh)
    w, mask = _free(mesh, u)
    r = np.zeros(len(w), dtype=w.dtype)
    for e, nodes in enumerate(mesh.elements):
        ue = w[nodes]
        grad = ue @ G[e]
        k = 1.0 + ue.mean() ** 2
        r[nodes] += A[e] * (k * (G[e] @ grad) - 1.0 / 3.0)
    r[mask] = np.asarray(u)[mask]
    return r


def complex_step_jacobian(fun, u, cols=None, h=1e-30):
    """Columns ``cols`` of dF/du by complex-step differentiation (exact to round-off)."""
    u = np.asarray(u, dtype=float)
    cols = np.arange(len(u)) if cols is None else np.asarray(cols)
    J = np.zeros((len(u), len(cols)))
    for k, j in enumerate(cols):
        z = u.astype(complex)
        z[j] += 1j * h
        J[:, k] = np.imag(fun(z)) / h
    return J


def complex_step_directional(fun, u, V, h=1e-30):
    """dF/du @ V for a dense (n, k) matrix V of directions."""
    u = np.asarray(u, dtype=float)
    V = np.atleast_2d(np.asarray(V, dtype=float).T).T
    out = np.zeros((len(u), V.shape[1]))
    for k in range(V.shape[1]):
        out[:, k] = np.imag(fun(u + 1j * h * V[:, k])) / h
    return out


def dense_newton(fun, u0, tol=1e-13, max_iter=50):
    """Global Newton with a complex-step Jacobian and dense solves."""
    u = np.array(u0, dtype=float)
    r = np.real(fun(u))
    r0 = np.linalg.norm(r)
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol * max(r0, 1e-300):
            return u
        J = complex_step_jacobian(fun, u)
        u = u - np.linalg.solve(J, r)
        r = np.real(fun(u))
    raise RuntimeError("oracle Newton did not converge")


# ---------------------------------------------------------------- Schwarz oracles

def local_correction(fun, u, dofs, tol=1e-14, max_iter=50):
    """T with R F(u - P T) = 0 on ``dofs`` by dense Newton; returns (T, point)."""
    u = np.asarray(u, dtype=float)
    t = np.zeros(len(dofs))

    def G(tt):
        w = u.astype(tt.dtype)
        w[dofs] = w[dofs] - tt
        return fun(w)[dofs]

    g0 = np.linalg.norm(G(t))
    for _ in range(max_iter):
        g = np.real(G(t))
        if np.linalg.norm(g) <= tol * max(g0, 1e-300):
            break
        J = complex_step_jacobian(G, t)
        t = t - np.linalg.solve(J, g)
    w = u.copy()
    w[dofs] -= t
    return t, w


def coarse_correction(fun, u, Phi, tol=1e-14, max_iter=50):
    """c with Phi^T F(u - Phi c) = 0; returns (c, point)."""
    Phi = np.asarray(Phi)
    u = np.asarray(u, dtype=float)

    def G(c):
        return Phi.T @ fun(u - Phi @ c)

    c = np.zeros(Phi.shape[1])
    g0 = np.linalg.norm(G(c))
    for _ in range(max_iter):
        g = np.real(G(c))
        if np.linalg.norm(g) <= tol * max(g0, 1e-300):
            break
        J = complex_step_jacobian(G, c)
        c = c - np.linalg.solve(J, g)
    return c, u - Phi @ c


def schwarz_residual(fun, u, decomp, variant, Phi=None, restricted=True):
    """Dense F_1 / F_a / F_h from explicit local and coarse Newton solves."""
    n = len(u)
    F = np.zeros(n)
    base = np.asarray(u, dtype=float)
    c = None
    if variant in ("additive", "hybrid"):
        c, point = coarse_correction(fun, u, Phi)
        if variant == "hybrid":
            base = point
    for i in range(decomp.n_sub):
        dofs = decomp.local_to_global[i]
        t, _ = local_correction(fun, base, dofs)
        if restricted:
            own = decomp.owned_local[i]
            F[dofs[own]] += t[own]
        else:
            F[dofs] += t
    if c is not None:
        F += Phi @ c
    return F


def schwarz_tangent(fun, u, decomp, variant, Phi=None, restricted=True):
    """Dense exact tangent of the Schwarz residual, built from complex-step Jacobians."""
    n = len(u)
    I = np.eye(n)
    base = np.asarray(u, dtype=float)
    Q0 = None
    if variant in ("additive", "hybrid"):
        Phi = np.asarray(Phi)
        _, point = coarse_correction(fun, u, Phi)
        K0 = complex_step_jacobian(fun, point)
        Q0 = Phi @ np.linalg.solve(Phi.T @ K0 @ Phi, Phi.T @ K0)
        if variant == "hybrid":
            base = point
    D = np.zeros((n, n))
    for i in range(decomp.n_sub):
        dofs = decomp.local_to_global[i]
        _, w = local_correction(fun, base, dofs)
        K = complex_step_jacobian(fun, w)
        DT = np.linalg.solve(K[np.ix_(dofs, dofs)], K[dofs])
        rows = dofs[decomp.owned_local[i]] if restricted else dofs
        sel = decomp.owned_local[i] if restricted else slice(None)
        D[rows] += DT[sel]
    if variant == "additive":
        D = D + Q0
    elif variant == "hybrid":
        D = D @ (I - Q0) + Q0
    return D

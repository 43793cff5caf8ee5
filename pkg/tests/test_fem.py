import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from nlschwarz.errors import InvalidArgumentError, NonFiniteError, NonPhysicalDeformationError
from nlschwarz.fem import (BlockAssembler, MaterialParams, NonlinearProblem, assemble,
                           first_piola, piola_tangent)
from nlschwarz.mesh import generate_structured_mesh

MAT = MaterialParams()


def near_identity(scale=0.2):
    return st.builds(lambda a: np.eye(2) + scale * a,
                     arrays(float, (2, 2), elements=st.floats(-1, 1)))


def test_material_moduli():
    assert np.isclose(MAT.mu, 210e9 / 2.6)
    assert np.isclose(MAT.lam, 210e9 * 0.3 / (1.3 * 0.4))
    assert np.isclose(MaterialParams(piola_mu_denominator=1).mu, 210e9 / 1.3)


@pytest.mark.parametrize("kw", [dict(E=-1.0), dict(nu=0.5), dict(piola_mu_denominator=3)])
def test_material_validation(kw):
    with pytest.raises(InvalidArgumentError):
        MaterialParams(**kw)


def test_piola_vanishes_at_identity():
    assert np.array_equal(first_piola(np.eye(2), MAT), np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(F=near_identity())
def test_piola_matches_direct_formula(F):
    P = first_piola(F, MAT)
    assert np.allclose(P, oracles.piola_direct(F, MAT.mu, MAT.lam), rtol=1e-12, atol=1e-3)


@settings(max_examples=50, deadline=None)
@given(F=near_identity())
def test_piola_tangent_major_symmetry(F):
    A = piola_tangent(F, MAT)
    assert np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * np.abs(A).max())


@settings(max_examples=30, deadline=None)
@given(F=near_identity(), seed=st.integers(0, 2**31))
def test_piola_tangent_matches_complex_step(F, seed):
    dF = np.random.default_rng(seed).standard_normal((2, 2))
    h = 1e-30
    fd = np.imag(oracles.piola_direct(F + 1j * h * dF, MAT.mu, MAT.lam)) / h
    A = piola_tangent(F, MAT)
    lin = (A @ dF.ravel()).reshape(2, 2)
    assert np.linalg.norm(lin - fd) <= 1e-10 * np.linalg.norm(fd)


def test_piola_tangent_central_difference():
    F = np.array([[1.1, 0.2], [-0.1, 0.95]])
    A = piola_tangent(F, MAT)
    h = 1e-6
    for col in range(4):
        dF = np.zeros(4)
        dF[col] = h
        fd = (first_piola(F + dF.reshape(2, 2), MAT) - first_piola(F - dF.reshape(2, 2), MAT)) / (2 * h)
        assert np.linalg.norm(fd.ravel() - A[:, col]) <= 1e-6 * np.linalg.norm(A[:, col])


@pytest.mark.parametrize("F", [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]])
def test_nonpositive_det_rejected(F):
    with pytest.raises(NonPhysicalDeformationError):
        first_piola(np.array(F), MAT)


def test_problem_checks_dofs_per_node():
    with pytest.raises(InvalidArgumentError):
        NonlinearProblem(generate_structured_mesh(2, 2), "neohooke")
    with pytest.raises(InvalidArgumentError):
        NonlinearProblem(generate_structured_mesh(2, 2), "plasticity")


def test_diffusion_residual_matches_loop_oracle():
    m = generate_structured_mesh(5, 4, 1.0, 0.8)
    p = NonlinearProblem(m)
    u = np.random.default_rng(1).standard_normal(m.n_dofs)
    r, _ = assemble(p, u)
    assert np.allclose(r, oracles.diffusion_residual_loop(m, u), rtol=0, atol=1e-13)


def test_diffusion_load_at_zero():
    # at u = 0 the free rows hold -(1/3) * area of the adjacent triangles
    m = generate_structured_mesh(2, 2)
    r, _ = assemble(NonlinearProblem(m), np.zeros(m.n_dofs))
    assert np.isclose(r[4], -6 * (0.125 / 3))
    assert np.all(r[m.dirichlet_dofs] == 0)


def test_neohooke_residual_matches_loop_oracle():
    m = generate_structured_mesh(6, 2, 3.0, 1.0, "beam", 2)
    p = NonlinearProblem(m, "neohooke", MAT, 5e6)
    u = 1e-3 * np.random.default_rng(2).standard_normal(m.n_dofs)
    r, _ = assemble(p, u)
    ref = oracles.neohooke_residual(m, u, MAT.mu, MAT.lam, 5e6)
    assert np.linalg.norm(r - ref) <= 1e-12 * np.linalg.norm(ref)


def test_neohooke_zero_force_zero_state():
    m = generate_structured_mesh(4, 2, 2.0, 1.0, "beam", 2)
    r, _ = assemble(NonlinearProblem(m, "neohooke", MAT, 0.0), np.zeros(m.n_dofs))
    assert np.abs(r).max() == 0.0


@pytest.mark.parametrize("kind", ["diffusion", "neohooke"])
def test_tangent_matches_complex_step(kind):
    rng = np.random.default_rng(3)
    if kind == "diffusion":
        m = generate_structured_mesh(4, 4)
        p = NonlinearProblem(m)
        u = rng.standard_normal(m.n_dofs)
        fun = lambda z: oracles.diffusion_residual(m, z)
    else:
        m = generate_structured_mesh(4, 2, 2.0, 1.0, "beam", 2)
        p = NonlinearProblem(m, "neohooke", MAT, 7e6)
        u = 1e-2 * rng.standard_normal(m.n_dofs)
        fun = lambda z: oracles.neohooke_residual(m, z, MAT.mu, MAT.lam, 7e6)
    _, K = assemble(p, u)
    J = oracles.complex_step_jacobian(fun, u)
    assert np.linalg.norm(K.toarray() - J) <= 1e-12 * np.linalg.norm(J)


def test_dirichlet_rows_and_columns_are_identity():
    m = generate_structured_mesh(3, 3)
    p = NonlinearProblem(m)
    u = np.random.default_rng(4).standard_normal(m.n_dofs)
    r, K = assemble(p, u)
    K = K.toarray()
    d = m.dirichlet_dofs
    assert np.array_equal(K[d][:, d], np.eye(len(d)))
    free = np.setdiff1d(np.arange(m.n_dofs), d)
    assert np.all(K[np.ix_(free, d)] == 0) and np.all(K[np.ix_(d, free)] == 0)
    assert np.array_equal(r[d], u[d])


def test_element_subset_assembly_sums_to_global():
    m = generate_structured_mesh(4, 4)
    p = NonlinearProblem(m)
    u = np.random.default_rng(5).standard_normal(m.n_dofs)
    half = np.arange(m.n_elements // 2)
    rest = np.arange(m.n_elements // 2, m.n_elements)
    r1, K1 = assemble(p, u, half, apply_dirichlet=False)
    r2, K2 = assemble(p, u, rest, apply_dirichlet=False)
    r, K = assemble(p, u, apply_dirichlet=False)
    assert np.allclose(r1 + r2, r, atol=1e-14)
    assert np.allclose((K1 + K2).toarray(), K.toarray(), atol=1e-14)


@pytest.mark.parametrize("kind", ["diffusion", "neohooke"])
def test_block_assembler_matches_global_rows(kind):
    dpn = 1 if kind == "diffusion" else 2
    m = generate_structured_mesh(6, 4, bc_spec="all_dirichlet" if dpn == 1 else "beam",
                                 dofs_per_node=dpn)
    p = NonlinearProblem(m, kind, MAT, 1e6)
    u = 1e-3 * np.random.default_rng(6).standard_normal(m.n_dofs)
    r, K = assemble(p, u)
    rows = np.sort(np.random.default_rng(7).choice(m.n_dofs, m.n_dofs // 3, replace=False))
    b = BlockAssembler(p, rows)
    rb, K_ext, K_rr = b.assemble(u)
    assert np.allclose(rb, r[rows], rtol=1e-13, atol=1e-9)
    Kd = K.toarray()
    assert np.allclose(K_ext.toarray(), Kd[np.ix_(rows, b.ext_dofs)], rtol=1e-13, atol=1e-3)
    assert np.allclose(K_rr.toarray(), Kd[np.ix_(rows, rows)], rtol=1e-13, atol=1e-3)
    # no row couples outside the extended set
    outside = np.setdiff1d(np.arange(m.n_dofs), b.ext_dofs)
    assert np.all(Kd[np.ix_(rows, outside)] == 0)


def test_block_assembler_rejects_unsorted_rows():
    m = generate_structured_mesh(3, 3)
    with pytest.raises(InvalidArgumentError):
        BlockAssembler(NonlinearProblem(m), np.array([4, 2]))


def test_non_finite_input_rejected():
    m = generate_structured_mesh(3, 3)
    u = np.zeros(m.n_dofs)
    u[5] = np.nan
    with pytest.raises(NonFiniteError):
        assemble(NonlinearProblem(m), u)


def test_inverted_element_reports_element():
    m = generate_structured_mesh(2, 1, 1.0, 1.0, "beam", 2)
    p = NonlinearProblem(m, "neohooke", MAT)
    u = np.zeros(m.n_dofs)
    u[2 * 4 + 1] = -3.0  # pull the free top node far below the bottom edge
    with pytest.raises(NonPhysicalDeformationError) as exc:
        assemble(p, u)
    assert exc.value.element in range(m.n_elements)
    assert exc.value.det <= 0


def test_vectorised_oracle_matches_loop_oracle():
    m = generate_structured_mesh(4, 3)
    u = np.random.default_rng(8).standard_normal(m.n_dofs)
    assert np.allclose(oracles.diffusion_residual(m, u), oracles.diffusion_residual_loop(m, u),
                       rtol=0, atol=1e-15)

import numpy as np
import pytest

from vemschwarz.mesh import build_hexagonal, build_quadrilateral, build_triangular, build_voronoi
from vemschwarz.vem import (DegenerateCellError, assemble_global, cell_quadrature, local_batch,
                            local_load, local_projector, local_stiffness, monomials, vem_space)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
PENTAGON = np.array([[0.1, 0.0], [1.0, 0.2], [1.2, 0.9], [0.5, 1.3], [-0.1, 0.7]])
TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def p1_stiffness(tri):
    (x1, y1), (x2, y2), (x3, y3) = tri
    b = np.array([y2 - y3, y3 - y1, y1 - y2])
    c = np.array([x3 - x2, x1 - x3, x2 - x1])
    area = 0.5 * ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1))
    return (np.outer(b, b) + np.outer(c, c)) / (4 * area)


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("poly", [TRIANGLE, SQUARE, PENTAGON], ids=["tri", "square", "pent"])
def test_projector_reproduces_polynomials(poly, k, rng):
    loc = local_batch(poly[None], k)
    D, PiS = loc["D"][0], loc["PiS"][0]
    for _ in range(3):
        c = rng.standard_normal(D.shape[1])
        assert np.allclose(PiS @ (D @ c), c, atol=1e-11)


def test_projector_of_constant():
    Pi = local_projector(PENTAGON, 1)
    assert np.allclose(Pi @ np.ones(5), [1, 0, 0], atol=1e-14)


def test_projector_hat_on_unit_square():
    # boundary integral gives grad = (-1/2, -1/2); vertex average fixes the constant at 1/4
    loc = local_batch(SQUARE[None], 1)
    vals = loc["D"][0] @ loc["PiS"][0][:, 0]
    assert np.allclose(vals, [0.75, 0.25, -0.25, 0.25], atol=1e-14)


def test_triangle_matches_p1():
    for tri in (TRIANGLE, np.array([[0.2, 0.1], [1.3, 0.4], [0.5, 1.1]])):
        assert np.allclose(local_stiffness(tri, 1), p1_stiffness(tri), atol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_stiffness_kernel_and_symmetry(k):
    K = local_stiffness(PENTAGON, k)
    assert np.allclose(K, K.T, atol=1e-14)
    assert np.abs(K.sum(axis=1)).max() <= 1e-11
    w = np.linalg.eigvalsh(K)
    assert w[0] > -1e-12 and w[1] > 1e-8


def test_unit_square_rank():
    w = np.linalg.eigvalsh(local_stiffness(SQUARE, 1))
    assert int((w > 1e-10).sum()) == 3


def test_kappa_scaling():
    assert np.allclose(local_stiffness(PENTAGON, 2, 1e6), 1e6 * local_stiffness(PENTAGON, 2),
                       rtol=1e-14, atol=0)
    with pytest.raises(ValueError):
        local_stiffness(PENTAGON, 1, 0.0)


@pytest.mark.parametrize("k", [1, 2])
def test_translation_and_scale_invariance(k):
    K = local_stiffness(PENTAGON, k)
    assert np.allclose(local_stiffness(PENTAGON + [3.0, -2.0], k), K, atol=1e-11)
    assert np.allclose(local_stiffness(0.01 * PENTAGON, k), K, atol=1e-10)


def test_degenerate_cell():
    with pytest.raises(DegenerateCellError):
        local_projector(np.array([[0, 0], [1, 0], [2, 0]], dtype=float), 1)


@pytest.mark.parametrize("k", [1, 2])
def test_load_examples(k):
    assert np.all(local_load(PENTAGON, k, lambda x, y: 0 * x) == 0)
    area = cell_quadrature(PENTAGON[None])[2][0]
    assert local_load(PENTAGON, k, lambda x, y: 1 + 0 * x).sum() == pytest.approx(area, rel=1e-13)


def test_load_unit_square():
    assert np.allclose(local_load(SQUARE, 1, lambda x, y: 1 + 0 * x), 0.25)


def test_quadrature_degree_four():
    qp, qw, area, _ = cell_quadrature(SQUARE[None])
    x, y = qp[0, :, 0], qp[0, :, 1]
    assert (qw[0] * x ** 4).sum() == pytest.approx(0.2, rel=1e-13)
    assert (qw[0] * x ** 2 * y ** 2).sum() == pytest.approx(1 / 9, rel=1e-13)


def test_mass_consistency_k2(rng):
    loc = local_batch(PENTAGON[None], 2)
    D, M = loc["D"][0], loc["M"][0]
    cen, diam = loc["centroid"][0], loc["diam"][0]
    qp, qw = loc["qp"][0], loc["qw"][0]
    a, b = np.r_[rng.standard_normal(3), 0, 0, 0], np.r_[rng.standard_normal(3), 0, 0, 0]
    m = monomials((qp - cen) / diam, 2)
    exact = (qw * (m @ a) * (m @ b)).sum()
    assert (D @ a) @ M @ (D @ b) == pytest.approx(exact, rel=1e-11)


def test_two_cell_mesh_hand_assembly():
    mesh = build_triangular(1)
    S = vem_space(mesh, 1)
    A = S.stiffness().toarray()
    H = np.zeros((4, 4))
    for c in range(2):
        v = mesh.cell(c)
        H[np.ix_(v, v)] += p1_stiffness(mesh.vertices[v])
    assert np.allclose(A, H, atol=1e-14)


def test_zero_data_zero_solution():
    sys_ = assemble_global(build_triangular(6), k=2, f=lambda x, y: 0 * x)
    assert np.all(sys_.b == 0)
    assert np.all(sys_.solve_direct() == 0)


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("mesh", [build_quadrilateral(7), build_hexagonal(60), build_voronoi(40)],
                         ids=["quad", "hex", "voronoi"])
def test_patch(mesh, k):
    u = lambda x, y: x + 2 * y
    sys_ = assemble_global(mesh, k=k, g=u)
    S = sys_.space
    assert np.abs(sys_.solve_direct() - S.interpolate(u)).max() <= 1e-10


@pytest.mark.parametrize("k", [1, 2])
def test_global_spd_small(k):
    sys_ = assemble_global(build_voronoi(30), k=k)
    A = sys_.A.toarray()
    assert sys_.n <= 500
    assert np.array_equal(A, A.T)
    assert np.linalg.eigvalsh(A)[0] > 0


def test_energy_scaling(rng):
    mesh = build_hexagonal(50)
    S = vem_space(mesh, 2)
    kappa = rng.uniform(1, 10, mesh.n_cells)
    v = rng.standard_normal(S.n_dofs)
    e1 = v @ S.stiffness(kappa) @ v
    e2 = v @ S.stiffness(8.0 * kappa) @ v
    assert e2 == pytest.approx(8.0 * e1, rel=1e-14)


def test_cell_subset_assembly_adds_up():
    mesh = build_triangular(4)
    S = vem_space(mesh, 2)
    mask = np.zeros(mesh.n_cells, dtype=bool)
    mask[::3] = True
    full = S.stiffness()
    parts = S.stiffness(cells=mask) + S.stiffness(cells=~mask)
    assert abs(full - parts).max() <= 1e-13


def test_cell_energy_matches_quadratic_form(rng):
    mesh = build_quadrilateral(4)
    S = vem_space(mesh, 1)
    v = S.interpolate(lambda x, y: 3 * x - y)
    assert S.cell_energy(v).sum() == pytest.approx(10.0, rel=1e-12)
    assert np.allclose(S.projected_gradients(v), [3.0, -1.0])


def test_dof_counts():
    mesh = build_hexagonal(30)
    assert vem_space(mesh, 1).n_dofs == mesh.n_vertices
    assert vem_space(mesh, 2).n_dofs == mesh.n_vertices + mesh.n_edges + mesh.n_cells
    assert vem_space(mesh, 2) is vem_space(mesh, 2)


def test_bad_kappa():
    with pytest.raises(ValueError):
        assemble_global(build_triangular(2), field=np.zeros(8))

import numpy as np
import pytest
import scipy.sparse as sp

from vemschwarz.linalg import (EigenConvergenceError, NotSPDError, deflated_generalized_eig,
                               dense_generalized_eig, factor_spd, jacobi_symmetric,
                               lanczos_cond_estimate, spmv, symmetrize)


def lap1d(n, neumann=False):
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tolil()
    if neumann:
        A[0, 0] = A[n - 1, n - 1] = 1
    return sp.csr_matrix(A)


def test_spmv_examples():
    assert np.array_equal(spmv(sp.identity(3, format="csr"), np.array([1.0, 2, 3])), [1, 2, 3])
    assert np.array_equal(spmv(sp.csr_matrix((2, 2)), np.array([5.0, 5])), [0, 0])
    assert np.array_equal(spmv(lap1d(3), np.ones(3)), [1, 0, 1])


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        spmv(sp.identity(3, format="csr"), np.ones(4))


def test_spmv_matches_scipy(rng):
    A = sp.random(50, 50, density=0.1, random_state=3, format="csr")
    x = rng.standard_normal(50)
    assert np.allclose(spmv(A, x), A @ x, rtol=1e-14, atol=1e-14)


def test_symmetrize_is_bitwise():
    A = sp.random(30, 30, density=0.2, random_state=1, format="csr")
    S = symmetrize(A)
    assert (S != S.T).nnz == 0


def test_factor_examples():
    F = factor_spd(sp.diags([4.0, 9.0]))
    assert np.allclose(F.solve(np.array([4.0, 9.0])), [1, 1])
    A = lap1d(4)
    x = np.array([1.0, 2, 3, 4])
    assert np.allclose(factor_spd(A).solve(spmv(A, x)), x, rtol=1e-12)


def test_factor_zero_matrix_reports_pivot_zero():
    with pytest.raises(NotSPDError, match="not SPD") as exc:
        factor_spd(sp.csr_matrix((3, 3)))
    assert exc.value.pivot == 0


def test_factor_indefinite():
    with pytest.raises(NotSPDError):
        factor_spd(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))


def test_factor_residual_on_ill_conditioned(rng):
    n = 200
    A = lap1d(n) + sp.identity(n) * 1e-6
    b = rng.standard_normal(n)
    x = factor_spd(A).solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-12


def test_factor_multiple_rhs(rng):
    A = lap1d(30) + sp.identity(30)
    B = rng.standard_normal((30, 4))
    X = factor_spd(A).solve(B)
    assert np.allclose(A @ X, B, atol=1e-12)


def test_empty_factor():
    F = factor_spd(sp.csr_matrix((0, 0)))
    assert F.solve(np.zeros(0)).shape == (0,)


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
def test_dense_eig_examples(method):
    w, V = dense_generalized_eig(np.diag([0.0, 2.0]), np.eye(2), method=method)
    assert np.allclose(w, [0, 2])
    assert np.allclose(np.abs(V), np.eye(2))
    w, V = dense_generalized_eig(np.diag([2.0, 2.0]), np.diag([1.0, 4.0]), method=method)
    assert np.allclose(w, [0.5, 2.0])
    w, V = dense_generalized_eig(lap1d(3, neumann=True).toarray(), np.eye(3), method=method)
    assert abs(w[0]) < 1e-12
    v = V[:, 0]
    assert np.allclose(v / v[0], 1.0)


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
def test_dense_eig_residual_and_orthonormality(method, rng):
    n = 40
    X = rng.standard_normal((n, n))
    A = X @ X.T
    Y = rng.standard_normal((n, n))
    M = Y @ Y.T + n * np.eye(n)
    w, V = dense_generalized_eig(A, M, method=method)
    assert np.all(np.diff(w) >= 0)
    nA, nM = np.linalg.norm(A, 2), np.linalg.norm(M, 2)
    for lam, v in zip(w, V.T):
        assert np.linalg.norm(A @ v - lam * M @ v) <= 1e-9 * (nA + abs(lam) * nM)
    assert np.allclose(V.T @ M @ V, np.eye(n), atol=1e-10)


def test_dense_eig_mass_not_spd():
    with pytest.raises(NotSPDError):
        dense_generalized_eig(np.eye(2), np.diag([1.0, -1.0]), method="jacobi")


def test_jacobi_iteration_cap():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 20))
    with pytest.raises(EigenConvergenceError) as exc:
        jacobi_symmetric(X + X.T, max_sweeps=1)
    assert exc.value.off > 0


def test_deflated_eig_matches_schur_oracle(rng):
    # M has a two-dimensional null space; finite eigenvalues come from the Schur complement
    n = 12
    X = rng.standard_normal((n, n))
    A = X @ X.T + np.eye(n)
    M = np.diag(np.r_[rng.uniform(1, 2, n - 2), 0.0, 0.0])
    w, V, ndef = deflated_generalized_eig(A, M)
    assert ndef == 2
    r, z = slice(0, n - 2), slice(n - 2, n)
    S = A[r, r] - A[r, z] @ np.linalg.solve(A[z, z], A[z, r])
    ref = np.sort(np.linalg.eigvals(np.linalg.solve(M[r, r], S)).real)
    assert np.allclose(w, ref, rtol=1e-10)
    for lam, v in zip(w, V.T):
        assert np.linalg.norm(A @ v - lam * M @ v) <= 1e-8 * np.linalg.norm(A, 2) * (1 + lam)


def test_lanczos_examples():
    from vemschwarz.schwarz import pcg

    _, rep = pcg(sp.identity(5, format="csr"), np.ones(5))
    assert rep.iterations == 1 and rep.cond_estimate == 1.0
    _, rep = pcg(sp.diags([1.0, 10.0]).tocsr(), np.array([1.0, 1.0]), tol=1e-14)
    assert rep.iterations == 2
    assert abs(lanczos_cond_estimate(rep.alphas, rep.betas) - 10.0) < 1e-6


def test_lanczos_needs_two_steps():
    with pytest.raises(ValueError, match="insufficient Krylov history"):
        lanczos_cond_estimate([1.0], [])


def test_lanczos_monotone_in_history(rng):
    from vemschwarz.schwarz import pcg

    n = 60
    A = sp.diags(np.linspace(1, 100, n)).tocsr()
    _, rep = pcg(A, rng.standard_normal(n), tol=1e-10)
    est = [lanczos_cond_estimate(rep.alphas[:m], rep.betas[:m - 1])
           for m in range(2, len(rep.alphas) + 1)]
    assert np.all(np.diff(est) >= -1e-9 * np.abs(est[1:]))
    assert est[-1] <= 100 * 1.01

import numpy as np
import pytest
import scipy.sparse as sp

from vemschwarz import decomposition as dc
from vemschwarz import pu as pumod
from vemschwarz import spectral as spc
from vemschwarz.linalg import NotSPDError, factor_spd
from vemschwarz.mesh import build_triangular, paint_coefficient, channel_layout
from vemschwarz.schwarz import (ConfigurationError, CoarseSolver, OneLevel, build_one_level,
                                build_two_level, dense_cond_oracle, pcg, preconditioner_matrix)
from vemschwarz.vem import assemble_global, vem_space


def setup(n=20, m=4, layers=1, eta=1.0):
    mesh = build_triangular(n)
    field = paint_coefficient(mesh, channel_layout("channels", 1 / n), eta)
    sys_ = assemble_global(mesh, field, f=lambda x, y: 1 + 0 * x)
    S = sys_.space
    P = dc.partition_structured(mesh, m)
    O = dc.extend_overlap(P, layers, S)
    sk = dc.extract_skeleton(P)
    F = pumod.build_pu(S, sk)
    return sys_, O, sk, F


def a_inner(A, u, v):
    return u @ (A @ v)


def test_single_subdomain_is_exact():
    sys_, _, _, _ = setup(m=1)
    O = dc.extend_overlap(dc.partition_structured(sys_.space.mesh, 1), 1, sys_.space)
    M1 = build_one_level(sys_, O)
    _, rep = pcg(sys_.A, sys_.b, M1)
    assert rep.iterations == 1 and rep.converged


def test_one_level_linear_and_symmetric(rng):
    sys_, O, _, _ = setup()
    M1 = build_one_level(sys_, O)
    r = rng.standard_normal(sys_.n)
    assert np.allclose(M1(3.5 * r), 3.5 * M1(r), rtol=1e-14, atol=1e-14)
    for _ in range(3):
        u, v = rng.standard_normal((2, sys_.n))
        lhs, rhs = a_inner(sys_.A, M1(sys_.A @ u), v), a_inner(sys_.A, u, M1(sys_.A @ v))
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)


def test_two_level_symmetric(rng):
    sys_, O, sk, F = setup(eta=1e4)
    kappa = sys_.kappa
    cs = spc.build_coarse_space(sys_.space, kappa, sk, F, sys_.free)
    M2 = build_two_level(build_one_level(sys_, O), cs, sys_)
    for _ in range(3):
        u, v = rng.standard_normal((2, sys_.n))
        lhs, rhs = a_inner(sys_.A, M2(sys_.A @ u), v), a_inner(sys_.A, u, M2(sys_.A @ v))
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)


def test_empty_coarse_space_equals_one_level(rng):
    sys_, O, _, _ = setup()
    M1 = build_one_level(sys_, O)
    M2 = build_two_level(M1, sp.csc_matrix((sys_.n, 0)), sys_)
    r = rng.standard_normal(sys_.n)
    assert np.array_equal(M2(r), M1(r))
    assert M2.coarse.dim == 0


def test_two_level_beats_one_level():
    sys_, O, _, F = setup(n=20, m=4)
    assert sys_.n <= 400
    M1 = build_one_level(sys_, O)
    M2 = build_two_level(M1, spc.non_adaptive_space(F, sys_.free), sys_)
    assert dense_cond_oracle(sys_.A, M2) < dense_cond_oracle(sys_.A, M1)


def test_high_contrast_adaptive_vs_non_adaptive():
    sys_, O, sk, F = setup(n=40, m=4, layers=2, eta=1e6)
    M1 = build_one_level(sys_, O)
    cs = spc.build_coarse_space(sys_.space, sys_.kappa, sk, F, sys_.free, weight="multiscale")
    _, ad = pcg(sys_.A, sys_.b, build_two_level(M1, cs, sys_))
    _, na = pcg(sys_.A, sys_.b, build_two_level(M1, spc.non_adaptive_space(F, sys_.free), sys_))
    assert ad.converged and ad.cond_estimate <= 50
    assert na.cond_estimate > 100 * ad.cond_estimate


def test_coarse_solver_drops_duplicates():
    sys_, _, _, F = setup()
    R = spc.non_adaptive_space(F, sys_.free).R0T
    R2 = sp.hstack([R, R[:, [3]] * 2.0]).tocsc()
    C = CoarseSolver(sys_.A, R2)
    assert C.dropped == [R.shape[1]] and C.dim == R.shape[1]


def test_pcg_zero_rhs():
    sys_, _, _, _ = setup()
    x, rep = pcg(sys_.A, np.zeros(sys_.n))
    assert rep.iterations == 0 and np.all(x == 0) and rep.converged


def test_pcg_identity():
    x, rep = pcg(sp.identity(7, format="csr"), np.arange(1.0, 8.0), lambda r: r.copy())
    assert rep.iterations == 1 and np.allclose(x, np.arange(1.0, 8.0))


def test_pcg_residual_and_history():
    sys_, O, _, _ = setup()
    x, rep = pcg(sys_.A, sys_.b, build_one_level(sys_, O), tol=1e-8)
    assert np.linalg.norm(sys_.b - sys_.A @ x) <= 1e-8 * np.linalg.norm(sys_.b) * 1.0001
    assert all(r > 0 for r in rep.residuals) and rep.residuals[-1] <= 1e-8


def test_pcg_matches_direct():
    sys_, O, _, _ = setup()
    x, _ = pcg(sys_.A, sys_.b, build_one_level(sys_, O), tol=1e-12)
    ref = factor_spd(sys_.A).solve(sys_.b)
    assert np.allclose(x, ref, rtol=1e-9, atol=1e-12)


def test_pcg_max_iter_flags():
    sys_, _, _, _ = setup()
    _, rep = pcg(sys_.A, sys_.b, max_iter=3)
    assert not rep.converged and rep.iterations == 3


def test_pcg_not_spd():
    A = sp.csr_matrix(np.diag([1.0, -1.0, 2.0]))
    with pytest.raises(NotSPDError, match="operator"):
        pcg(A, np.ones(3))


def test_pcg_deterministic():
    sys_, O, _, _ = setup()
    M1 = build_one_level(sys_, O)
    a, ra = pcg(sys_.A, sys_.b, M1)
    b, rb = pcg(sys_.A, sys_.b, M1)
    assert a.tobytes() == b.tobytes() and ra.residuals == rb.residuals


def test_oracle_examples():
    A = sp.diags([1.0, 4.0]).tocsr()
    assert dense_cond_oracle(A) == pytest.approx(4.0)
    F = factor_spd(A)
    assert dense_cond_oracle(A, F.solve) == pytest.approx(1.0)


def test_oracle_size_cap():
    with pytest.raises(ValueError, match="limited"):
        dense_cond_oracle(sp.identity(2001, format="csr"))


def test_preconditioner_matrix_is_inverse():
    A = sp.diags([2.0, 5.0, 7.0]).tocsr()
    P = preconditioner_matrix(factor_spd(A).solve, 3)
    assert np.allclose(P, np.diag([0.5, 0.2, 1 / 7]))


def test_bad_local_sets():
    A = sp.csr_matrix(np.diag([1.0, 0.0, 1.0]))
    with pytest.raises(ConfigurationError):
        OneLevel(A, [np.array([0, 1]), np.array([2])])

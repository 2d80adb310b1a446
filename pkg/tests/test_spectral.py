import warnings
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from vemschwarz import decomposition as dc
from vemschwarz import pu as pumod
from vemschwarz import spectral as spc
from vemschwarz.mesh import build_quadrilateral, build_triangular
from vemschwarz.vem import assemble_global, vem_space


def floating_index(sk):
    return next(i for i in range(sk.n_coarse) if sk.is_floating(i))


def boundary_index(sk):
    return next(i for i in range(sk.n_coarse) if not sk.is_floating(i))


def test_neumann_nullspace(tri16_setup):
    m, S, _, sk, _ = tri16_setup
    i = floating_index(sk)
    A, dofs = spc.assemble_neumann(S, np.ones(m.n_cells), sk.omega_mask(i))
    assert np.abs(A @ np.ones(dofs.size)).max() <= 1e-11


def test_boundary_neighbourhood_spd(tri16_setup):
    m, S, _, sk, _ = tri16_setup
    i = boundary_index(sk)
    A, dofs = spc.assemble_neumann(S, np.ones(m.n_cells), sk.omega_mask(i))
    assert dofs.size <= 200
    assert np.linalg.eigvalsh(A.toarray())[0] > 0


def test_neumann_kappa_linear(tri16_setup, rng):
    m, S, _, sk, _ = tri16_setup
    kappa = rng.uniform(1, 5, m.n_cells)
    A1, d = spc.assemble_neumann(S, kappa, sk.omega_mask(0))
    A2, _ = spc.assemble_neumann(S, 2 * kappa, sk.omega_mask(0))
    v = rng.standard_normal(d.size)
    assert v @ A2 @ v == pytest.approx(2 * (v @ A1 @ v), rel=1e-14)


def test_neumann_rejects_disconnected(tri16):
    S = vem_space(tri16, 1)
    mask = np.zeros(tri16.n_cells, dtype=bool)
    mask[[0, tri16.n_cells - 1]] = True
    with pytest.raises(ValueError, match="connected"):
        spc.assemble_neumann(S, np.ones(tri16.n_cells), mask)


def test_kappa_mass_exact_for_linears():
    m = build_quadrilateral(1)
    S = vem_space(m, 1)
    v = S.interpolate(lambda x, y: 1 + 2 * x - 3 * y)
    # int_0^1 int_0^1 (1 + 2x - 3y)^2 = 1 + 4/3 + 3 + 2 - 3 - 3 = 4/3
    assert v @ S.mass() @ v == pytest.approx(4 / 3, rel=1e-13)


def test_multiscale_weight_of_hat():
    m = build_quadrilateral(6)
    S = vem_space(m, 1)
    H = 0.5
    chi = np.clip(1 - np.abs(S.dof_coords[:, 0] - 0.5) / H, 0, 1)
    fake = SimpleNamespace(chi=sp.csc_matrix(chi[:, None]))
    w = spc.multiscale_weight(S, np.ones(m.n_cells), fake, [0], H)
    assert np.allclose(w, 1.0, rtol=1e-12)


def test_abstract_mass_brute_force(rng):
    m = build_triangular(3)
    S = vem_space(m, 1)
    A = S.stiffness().toarray()
    n = S.n_dofs
    assert n <= 20
    chi, xi = rng.uniform(0, 1, n), rng.uniform(0, 1, (n, 2))
    M = spc.abstract_mass(sp.csr_matrix(A), chi, xi).toarray()
    for _ in range(5):
        v = rng.standard_normal(n)
        brute = sum((xi[:, s] * chi * v) @ A @ (xi[:, s] * chi * v) for s in range(2))
        assert v @ M @ v == pytest.approx(brute, rel=1e-12)


def test_floating_kappa_one_spectrum(tri16_setup):
    m, S, _, sk, _ = tri16_setup
    i = floating_index(sk)
    prob = spc.local_problem(S, np.ones(m.n_cells), sk, i)
    w, V, ndef = spc.solve_local_eig(prob)
    assert ndef == 0 and abs(w[0]) < 1e-10
    assert np.allclose(V[:, 0] / V[0, 0], 1.0, atol=1e-8)
    assert int((w < 1).sum()) == 1
    assert np.all(np.diff(w) >= 0)
    assert len(w) == spc.DEFAULT_N_EIGS


def test_select_modes_examples():
    assert spc.select_modes([0, 0.3, 5, 9]) == (2, False)
    assert spc.select_modes([2.0, 3.0], floating=False) == (0, False)
    assert spc.select_modes([2.0, 3.0], floating=True) == (1, False)
    with pytest.warns(spc.SelectionCapWarning):
        assert spc.select_modes(np.zeros(20), l_max=12) == (12, True)


def test_spectral_identities(tri16_setup, rng):
    m, S, _, sk, _ = tri16_setup
    kappa = np.where(m.cell_centroids[:, 1] > 0.5, 1e3, 1.0)
    prob = spc.local_problem(S, kappa, sk, floating_index(sk))
    w, V, _ = spc.solve_local_eig(prob, n_eigs=None)
    A, M = prob.A.toarray(), prob.M.toarray()
    for _ in range(5):
        v = rng.standard_normal(len(w))
        c = V.T @ M @ v
        assert (c ** 2 * w).sum() == pytest.approx(v @ A @ v, rel=1e-8)
        assert (c ** 2).sum() == pytest.approx(v @ M @ v, rel=1e-8)


def test_constant_mode_column_is_chi(tri16_setup):
    m, S, _, sk, F = tri16_setup
    sys_ = assemble_global(m)
    cs = spc.build_coarse_space(S, np.ones(m.n_cells), sk, F, sys_.free)
    i = floating_index(sk)
    sel = cs.selections[i]
    col = spc.coarse_columns(F, sel)[0].toarray().ravel()
    chi = F.column(i)
    scale = col[sk.coarse_vertices[i]] / chi[sk.coarse_vertices[i]]
    assert np.allclose(col, scale * chi, atol=1e-12)
    assert cs.dim == sum(s.L for s in cs.selections) == len(cs.columns)
    # supports stay inside the generator's support
    R = cs.R0T.toarray()
    for j, (g, _) in enumerate(cs.columns):
        assert not np.any(R[:, j][F.column(g)[sys_.free] == 0])


def test_boundary_neighbourhood_may_select_nothing(tri16_setup):
    m, S, _, sk, F = tri16_setup
    sel = spc.build_selection(spc.local_problem(S, np.ones(m.n_cells), sk, boundary_index(sk)))
    assert sel.L == 0 and sel.psi.shape[1] == 0
    assert spc.coarse_columns(F, sel) == []


def test_interpolant_projection_identity():
    m = build_triangular(8)
    S = vem_space(m, 1)
    sk = dc.extract_skeleton(dc.partition_structured(m, 1))
    F = pumod.build_pu(S, sk)
    kappa = np.ones(m.n_cells)
    sels, masses = [], []
    for i in range(sk.n_coarse):
        prob = spc.local_problem(S, kappa, sk, i)
        sels.append(spc.build_selection(prob, tau=200.0, l_max=40))
        masses.append(prob.M)
    psi = sels[0].psi
    assert psi.shape[1] >= 3
    v = np.zeros(S.n_dofs)
    v[sels[0].dofs] = psi @ np.array([1.0, -2.0, 0.5] + [0.0] * (psi.shape[1] - 3))
    assert np.abs(spc.coarse_interpolant(v, sels, F, masses) - v).max() <= 1e-10


def test_multiscale_and_abstract_problems(tri16_setup):
    m, S, P, sk, F = tri16_setup
    kappa = np.ones(m.n_cells)
    O = dc.extend_overlap(P, 1, S)
    xi = pumod.overlap_pu(O, S)
    for mode in ("multiscale", "abstract"):
        prob = spc.local_problem(S, kappa, sk, floating_index(sk), mode, F, xi)
        w, V, _ = spc.solve_local_eig(prob, n_eigs=10)
        assert np.all(np.isfinite(w)) and np.all(w > -1e-8)
        assert np.allclose(V.T @ prob.M @ V, np.eye(len(w)), atol=1e-8)
    with pytest.raises(ValueError):
        spc.local_problem(S, kappa, sk, 0, "multiscale")
    with pytest.raises(ValueError):
        spc.local_problem(S, kappa, sk, 0, "laplace")


def test_eigen_csv(tri16_setup):
    m, S, _, sk, F = tri16_setup
    cs = spc.build_coarse_space(S, np.ones(m.n_cells), sk, F, assemble_global(m).free, n_eigs=3)
    lines = cs.eigen_csv(eta=1.0).splitlines()
    assert lines[0] == "omega_id,ell,lambda,eta"
    assert len(lines) == 1 + 3 * sk.n_coarse


def test_gmsfem_no_snapshots(tri16_setup):
    m, S, _, sk, _ = tri16_setup
    prob = spc.local_problem(S, np.ones(m.n_cells), sk, floating_index(sk))
    W = spc.gmsfem_snapshots(prob, 0)
    assert W.shape[1] == 1
    w, _ = spc.gmsfem_eig(prob, W)
    assert w.shape == (1,) and abs(w[0]) < 1e-10


def test_gmsfem_interlacing(tri16_setup):
    m, S, _, sk, _ = tri16_setup
    kappa = np.where(np.abs(m.cell_centroids[:, 1] - 0.5) < 0.04, 1e4, 1.0)
    for i in range(sk.n_coarse):
        prob = spc.local_problem(S, kappa, sk, i)
        full, _, _ = spc.solve_local_eig(prob, n_eigs=None)
        snap, _ = spc.gmsfem_eig(prob, spc.gmsfem_snapshots(prob, 10, rng_seed=[0, i]))
        assert np.all(snap >= full[:snap.size] * (1 - 1e-9) - 1e-12)


def test_gmsfem_rank_warning(tri16):
    S = vem_space(tri16, 1)
    sk = dc.extract_skeleton(dc.partition_structured(tri16, 4))
    prob = spc.local_problem(S, np.ones(tri16.n_cells), sk, 0)
    n = prob.A.shape[0]
    with pytest.warns(spc.SnapshotRankWarning):
        W = spc.gmsfem_snapshots(prob, n + 5)
    assert W.shape[1] <= n


def test_non_adaptive_space(tri16_setup):
    m, S, _, sk, F = tri16_setup
    sys_ = assemble_global(m)
    cs = spc.non_adaptive_space(F, sys_.free)
    assert cs.dim == sk.n_coarse and cs.R0T.shape[0] == sys_.n


def test_parallel_runner_matches_serial(tri16_setup):
    from concurrent.futures import ThreadPoolExecutor

    m, S, _, sk, F = tri16_setup
    kappa = np.where(m.cell_centroids[:, 0] > 0.6, 1e4, 1.0)
    free = assemble_global(m).free
    a = spc.build_coarse_space(S, kappa, sk, F, free)
    with ThreadPoolExecutor(4) as ex, warnings.catch_warnings():
        b = spc.build_coarse_space(S, kappa, sk, F, free, runner=ex.map)
    assert a.columns == b.columns
    assert np.array_equal(a.R0T.toarray(), b.R0T.toarray())

"""Local generalized eigenproblems on coarse neighbourhoods and the spectral coarse basis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .decomposition import CoarseSkeleton
from .linalg import NotSPDError, deflated_generalized_eig, dense_generalized_eig, factor_spd

DEFAULT_N_EIGS = 40
DEFAULT_L_MAX = 12
WEIGHT_MODES = ("kappa", "multiscale", "abstract")


class SelectionCapWarning(UserWarning):
    pass


class SnapshotRankWarning(UserWarning):
    pass


def neighbourhood_dofs(space, cells_mask):
    """Dofs touched by the masked cells, minus those on the outer boundary."""
    inc = space.cell_dof_incidence
    dofs = np.unique(inc[np.flatnonzero(cells_mask)].indices)
    return dofs[~space.boundary_dofs[dofs]]


def assemble_neumann(space, kappa, cells_mask, dofs=None):
    """Kappa-weighted stiffness of the masked cells with natural conditions on the
    inner boundary; rows and columns on the outer boundary are removed."""
    cells = np.flatnonzero(cells_mask)
    adj = space.mesh.cell_adjacency[cells][:, cells]
    if cells.size == 0 or connected_components(adj, directed=False)[0] != 1:
        raise ValueError("neighbourhood is empty or not connected")
    if dofs is None:
        dofs = neighbourhood_dofs(space, cells_mask)
    A = space.stiffness(kappa, cells=np.asarray(cells_mask, dtype=bool))
    return A[dofs][:, dofs].tocsr(), dofs


def multiscale_weight(space, kappa, pu, generators, H):
    """Per-cell ``H^2 sum_j kappa |grad Pi chi_j|^2`` (cell average) over ``generators``."""
    chi = pu.chi[:, list(generators)].toarray()
    energy = space.cell_energy(chi).sum(axis=1)
    return H * H * np.asarray(kappa) * energy / space.mesh.cell_areas


def abstract_mass(A_local, chi_local, xi_local):
    """``sum_s a(xi_s chi v, xi_s chi v)`` as a matrix: ``sum_s D_s A D_s``, ``D_s = diag(xi_s chi)``."""
    M = sp.csr_matrix(A_local.shape)
    for s in range(xi_local.shape[1]):
        d = sp.diags(xi_local[:, s] * chi_local)
        M = M + d @ A_local @ d
    return 0.5 * (M + M.T)


@dataclass
class LocalEigenproblem:
    index: int
    dofs: np.ndarray
    A: sp.csr_matrix
    M: sp.csr_matrix
    floating: bool
    mode: str
    cells_mask: np.ndarray
    semidefinite: bool = False


def local_problem(space, kappa, skeleton: CoarseSkeleton, i, mode="kappa", pu=None, xi=None,
                  H=None) -> LocalEigenproblem:
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {mode!r}")
    mask = skeleton.omega_mask(i)
    A, dofs = assemble_neumann(space, kappa, mask)
    floating = skeleton.is_floating(i)
    semidef = False
    if mode == "kappa":
        M = space.mass(kappa, cells=mask)[dofs][:, dofs]
    elif mode == "multiscale":
        if pu is None:
            raise ValueError("multiscale weights need the coarse partition of unity")
        mesh = space.mesh
        in_omega = np.zeros(mesh.n_vertices, dtype=bool)
        in_omega[np.unique(mesh.cell_vertex_incidence[np.flatnonzero(mask)].indices)] = True
        gens = [j for j, v in enumerate(skeleton.coarse_vertices) if in_omega[v]]
        H = skeleton.partition.H if H is None else H
        w = multiscale_weight(space, kappa, pu, gens, H)
        semidef = bool((w[mask] <= 0).any())
        M = space.mass(w, cells=mask)[dofs][:, dofs]
    else:
        if pu is None or xi is None:
            raise ValueError("abstract weights need both partitions of unity")
        chi = pu.column(i)[dofs]
        X = xi.xi[dofs].toarray()
        touching = np.flatnonzero(np.abs(X).sum(axis=0) > 0)
        M = abstract_mass(A, chi, X[:, touching])
        semidef = True
    return LocalEigenproblem(i, dofs, A.tocsr(), sp.csr_matrix(M), floating, mode, mask, semidef)


def solve_local_eig(problem: LocalEigenproblem, n_eigs=DEFAULT_N_EIGS, method="auto"):
    """Lowest eigenpairs of ``A psi = lambda M psi``; returns ``(w, V, n_deflated)``."""
    n = problem.A.shape[0]
    k = n if n_eigs is None else min(int(n_eigs), n)
    if not problem.semidefinite:
        try:
            w, V = dense_generalized_eig(problem.A, problem.M, method=method, n_eigs=k)
            return w, V, 0
        except NotSPDError:
            pass
    return deflated_generalized_eig(problem.A, problem.M, method=method, n_eigs=k)


def select_modes(w, tau=1.0, l_max=DEFAULT_L_MAX, floating=False):
    """Number of modes below ``tau``, capped at ``l_max``; floating neighbourhoods keep one."""
    w = np.asarray(w)
    L = int(np.count_nonzero(w < tau))
    capped = L > l_max
    if capped:
        warnings.warn(f"mode cap {l_max} reached ({L} eigenvalues below {tau})",
                      SelectionCapWarning, stacklevel=2)
        L = l_max
    if floating and L == 0 and w.size:
        L = 1
    return L, capped


@dataclass
class EigenSelection:
    index: int
    dofs: np.ndarray
    eigenvalues: np.ndarray
    psi: np.ndarray             # (len(dofs), L) selected, M-orthonormal
    L: int
    lambda_next: float          # lambda_{L+1} (inf when not computed)
    floating: bool
    capped: bool = False
    n_deflated: int = 0
    M: sp.csr_matrix | None = None
    A: sp.csr_matrix | None = None


@dataclass
class CoarseSpace:
    R0T: sp.csc_matrix          # (n_free, dimV0)
    columns: list               # (generator i, mode ell) per column
    selections: list = field(default_factory=list)
    mode: str = "adaptive-kappa"

    @property
    def dim(self):
        return self.R0T.shape[1]

    def eigen_csv(self, eta=None):
        lines = ["omega_id,ell,lambda" + (",eta" if eta is not None else "")]
        for s in self.selections:
            for ell, lam in enumerate(s.eigenvalues, start=1):
                row = f"{s.index},{ell},{float(lam)!r}"
                lines.append(row + (f",{float(eta)!r}" if eta is not None else ""))
        return "\n".join(lines) + "\n"


def _restrict_columns(cols, free, n_dofs):
    """Stack full-dof columns and keep the free rows."""
    if not cols:
        return sp.csc_matrix((free.size, 0))
    M = sp.hstack(cols).tocsr()
    return M[free].tocsc()


def coarse_columns(pu, selection: EigenSelection):
    """Full-dof columns ``chi_i * psi_ell`` (dof-wise products) of one neighbourhood."""
    chi = pu.column(selection.index)[selection.dofs]
    n = pu.chi.shape[0]
    out = []
    for ell in range(selection.L):
        vals = chi * selection.psi[:, ell]
        nz = vals != 0.0
        out.append(sp.csc_matrix((vals[nz], (selection.dofs[nz], np.zeros(nz.sum(), dtype=int))),
                                 shape=(n, 1)))
    return out


def build_selection(problem, tau=1.0, l_max=DEFAULT_L_MAX, n_eigs=DEFAULT_N_EIGS, method="auto",
                    keep_matrices=False):
    w, V, ndef = solve_local_eig(problem, n_eigs=n_eigs, method=method)
    L, capped = select_modes(w, tau, l_max, problem.floating)
    nxt = float(w[L]) if L < w.size else float("inf")
    return EigenSelection(problem.index, problem.dofs, w, V[:, :L].copy(), L, nxt, problem.floating,
                          capped, ndef, problem.M if keep_matrices else None,
                          problem.A if keep_matrices else None)


def build_coarse_space(space, kappa, skeleton, pu, free, weight="kappa", tau=1.0,
                       l_max=DEFAULT_L_MAX, n_eigs=DEFAULT_N_EIGS, xi=None, method="auto",
                       keep_matrices=False, runner=map) -> CoarseSpace:
    """Adaptive coarse space from every neighbourhood, columns in (i, ell) order."""
    def one(i):
        prob = local_problem(space, kappa, skeleton, i, weight, pu, xi)
        return build_selection(prob, tau, l_max, n_eigs, method, keep_matrices)

    selections = list(runner(one, range(skeleton.n_coarse)))
    cols, meta = [], []
    for sel in selections:
        c = coarse_columns(pu, sel)
        cols += c
        meta += [(sel.index, ell) for ell in range(len(c))]
    return CoarseSpace(_restrict_columns(cols, free, space.n_dofs), meta, selections,
                       f"adaptive-{weight}")


def non_adaptive_space(pu, free) -> CoarseSpace:
    """One column per generator: the partition of unity itself."""
    R = pu.chi.tocsr()[free].tocsc()
    return CoarseSpace(R, [(i, 0) for i in range(R.shape[1])], [], "non-adaptive")


def local_projection(selection: EigenSelection, M, v_local):
    """``sum_ell (v, psi_ell)_M psi_ell`` on one neighbourhood."""
    c = selection.psi.T @ (M @ v_local)
    return selection.psi @ c


def coarse_interpolant(v, selections, pu, masses):
    """``I_0 v = sum_i chi_i * I_L^{omega_i} v`` for a full-dof vector ``v``."""
    out = np.zeros_like(np.asarray(v, dtype=float))
    for sel, M in zip(selections, masses):
        loc = local_projection(sel, M, v[sel.dofs])
        out[sel.dofs] += pu.column(sel.index)[sel.dofs] * loc
    return out


# -- randomized snapshot space -------------------------------------------------

def gmsfem_snapshots(problem: LocalEigenproblem, n_snapshots, rng_seed=0, mass=None, tol=1e-10):
    """Orthonormal basis of span{u_1..u_M, 1}, ``u_l`` Neumann responses to random forcings."""
    n = problem.A.shape[0]
    one = np.ones(n)
    if n_snapshots < 1:
        return one[:, None] / np.sqrt(n)
    rng = np.random.default_rng(rng_seed)
    M1 = problem.M if mass is None else mass
    F = rng.standard_normal((n, n_snapshots))
    m1 = M1 @ one
    F -= np.outer(one, (m1 @ F) / (m1 @ one))
    Bf = M1 @ F
    if problem.floating:
        # pin one dof; the forcing is compatible with the constant null space
        keep = np.arange(1, n)
        U = np.zeros((n, n_snapshots))
        U[keep] = factor_spd(problem.A[keep][:, keep]).solve(Bf[keep])
    else:
        U = factor_spd(problem.A).solve(Bf)
    W = np.column_stack([one, U])
    Q, R, _ = sla.qr(W, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int((d > tol * d[0]).sum())
    if rank < W.shape[1]:
        warnings.warn(f"snapshot space rank {rank} < {W.shape[1]}; dropping dependent snapshots",
                      SnapshotRankWarning, stacklevel=2)
    return Q[:, :rank]


def gmsfem_eig(problem: LocalEigenproblem, W):
    """Rayleigh-Ritz of ``A psi = lambda M psi`` in the span of ``W``."""
    A = W.T @ (problem.A @ W)
    M = W.T @ (problem.M @ W)
    w, Y = dense_generalized_eig(0.5 * (A + A.T), 0.5 * (M + M.T), method="jacobi")
    return w, W @ Y


def build_gmsfem_space(space, kappa, skeleton, pu, free, n_snapshots=20, rng_seed=0, tau=1.0,
                       l_max=DEFAULT_L_MAX, runner=map) -> CoarseSpace:
    """Coarse space from Rayleigh-Ritz eigenpairs in per-neighbourhood snapshot spaces.

    Neighbourhood ``i`` draws its forcings from ``default_rng([rng_seed, i])``.
    """
    def one(i):
        prob = local_problem(space, kappa, skeleton, i, "kappa")
        W = gmsfem_snapshots(prob, n_snapshots, rng_seed=[int(rng_seed), int(i)])
        w, V = gmsfem_eig(prob, W)
        L, capped = select_modes(w, tau, l_max, prob.floating)
        nxt = float(w[L]) if L < w.size else float("inf")
        return EigenSelection(i, prob.dofs, w, V[:, :L].copy(), L, nxt, prob.floating, capped)

    selections = list(runner(one, range(skeleton.n_coarse)))
    cols, meta = [], []
    for sel in selections:
        c = coarse_columns(pu, sel)
        cols += c
        meta += [(sel.index, ell) for ell in range(len(c))]
    return CoarseSpace(_restrict_columns(cols, free, space.n_dofs), meta, selections, "gmsfem")

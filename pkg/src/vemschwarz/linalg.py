"""Sparse/dense linear-algebra kernels used by every other module.

Sparse symmetric matrices are stored as ``scipy.sparse.csr_matrix``; the
matrix-vector product, the envelope Cholesky factorization and the Jacobi
eigensolver run on the compiled kernels in :mod:`vemschwarz._kernels`.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _kernels

JACOBI_MAX_N = 160
JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization meets a non-positive pivot.

    ``pivot`` is the elimination step at which it failed and ``index`` the
    corresponding row of the unpermuted matrix.
    """

    def __init__(self, pivot, index=None, what="matrix"):
        self.pivot = pivot
        self.index = pivot if index is None else index
        super().__init__(f"{what} not SPD: non-positive pivot {pivot} (row {self.index})")


class EigenConvergenceError(np.linalg.LinAlgError):
    def __init__(self, off, sweeps):
        self.off = off
        self.sweeps = sweeps
        super().__init__(f"Jacobi did not converge after {sweeps} sweeps (off-diagonal norm {off:.3e})")


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def symmetrize(A) -> sp.csr_matrix:
    """Average with the transpose so that ``A[i, j] == A[j, i]`` bitwise."""
    A = as_csr(A)
    return as_csr((A + A.T) * 0.5)


def spmv(A, x):
    """``A @ x`` with a fixed row-by-row summation order."""
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    A = A if sp.isspmatrix_csr(A) else as_csr(A)
    return _kernels.csr_matvec(A.indptr, A.indices, A.data, x)


class FactorizedSPD:
    """Envelope Cholesky factor ``P A P^T = L L^T`` with an RCM permutation ``P``."""

    def __init__(self, matrix, perm, first, ptr, vals):
        self.matrix = matrix
        self.perm = perm
        self.first = first
        self.ptr = ptr
        self.vals = vals
        self.n = perm.shape[0]
        self._iperm = np.empty_like(perm)
        self._iperm[perm] = np.arange(self.n)

    @property
    def nnz(self):
        return self.vals.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factor {self.n}, rhs {b.shape}")
        vec = b.ndim == 1
        if self.n == 0:
            return np.zeros_like(b)
        rhs = np.ascontiguousarray(b[self.perm].reshape(self.n, -1))
        x = _kernels.envelope_solve(self.first, self.ptr, self.vals, rhs)
        x = x[self._iperm]
        return x[:, 0] if vec else x


def factor_spd(A) -> FactorizedSPD:
    """Factor a sparse SPD matrix; raises :class:`NotSPDError` otherwise."""
    A = as_csr(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return FactorizedSPD(A, empty, empty, np.zeros(1, dtype=np.int64), np.zeros(0))
    perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
    B = as_csr(A[perm][:, perm])
    B = sp.tril(B, format="csr")
    B.sort_indices()
    rows = np.repeat(np.arange(n), np.diff(B.indptr))
    first = np.arange(n, dtype=np.int64)
    np.minimum.at(first, rows, B.indices.astype(np.int64))
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(np.arange(n) - first + 1)
    vals = np.zeros(ptr[-1])
    vals[ptr[rows] + B.indices - first[rows]] = B.data
    bad = _kernels.envelope_factor(first, ptr, vals)
    if bad >= 0:
        raise NotSPDError(int(bad), int(perm[bad]))
    return FactorizedSPD(A, perm, first, ptr, vals)


def _cholesky_dense(M, what="mass matrix"):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        d = np.diag(M)
        bad = int(np.argmin(d)) if d.size else 0
        raise NotSPDError(bad, what=what) from None


def jacobi_symmetric(C, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi."""
    C = np.array(C, dtype=float, copy=True)
    n = C.shape[0]
    rounds = _kernels.round_robin_pairs(n)
    w, V, sweeps, off = _kernels.jacobi_eigh(C, rounds, tol, max_sweeps)
    nrm = np.sqrt(np.sum(C * C)) if n else 0.0
    if off > tol * max(nrm, np.abs(w).max(initial=0.0)):
        raise EigenConvergenceError(off, sweeps)
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def dense_generalized_eig(A, M, method="auto", n_eigs=None):
    """Solve ``A psi = lambda M psi`` for symmetric A and SPD M.

    Returns eigenvalues in ascending order and M-orthonormal eigenvectors
    (columns). ``method`` is ``"jacobi"`` (Cholesky reduction + cyclic
    Jacobi), ``"lapack"`` or ``"auto"`` (Jacobi up to ``JACOBI_MAX_N``).
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or M.shape != (n, n):
        raise ValueError("A and M must be square and of equal size")
    k = n if n_eigs is None else min(int(n_eigs), n)
    if n == 0 or k == 0:
        return np.zeros(0), np.zeros((n, 0))
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        L = _cholesky_dense(M)
        C = sla.solve_triangular(L, A, lower=True)
        C = sla.solve_triangular(L, C.T, lower=True)
        C = 0.5 * (C + C.T)
        w, Y = jacobi_symmetric(C)
        V = sla.solve_triangular(L.T, Y, lower=False)
        return w[:k], V[:, :k]
    if method == "lapack":
        try:
            w, V = sla.eigh(A, M, subset_by_index=[0, k - 1])
        except np.linalg.LinAlgError:
            _cholesky_dense(M)
            raise
        return w, V
    raise ValueError(f"unknown method {method!r}")


def deflated_generalized_eig(A, M, rtol=1e-12, method="auto", n_eigs=None):
    """Finite eigenpairs of ``A psi = lambda M psi`` with a positive *semi*-definite M.

    With ``M = U_r mu U_r^T`` (eigenvalues above ``rtol * max``) and ``U_n``
    spanning the rest, the null-space part of ``psi`` is eliminated through
    ``A_nn``, leaving the Schur complement pencil on the range of M. Returns
    ``(w, V, n_deflated)``.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float)
    mu, U = np.linalg.eigh(0.5 * (M + M.T))
    keep = mu > rtol * max(mu.max(initial=0.0), 0.0)
    Ur, Un = U[:, keep], U[:, ~keep]
    AU = A @ Ur
    S = Ur.T @ AU
    if Un.shape[1]:
        Ann = Un.T @ A @ Un
        Anr = Un.T @ AU
        X = -np.linalg.pinv(0.5 * (Ann + Ann.T), rcond=1e-13, hermitian=True) @ Anr
        S = S + Anr.T @ X
    else:
        X = np.zeros((0, Ur.shape[1]))
    d = 1.0 / np.sqrt(mu[keep])
    C = d[:, None] * S * d[None, :]
    C = 0.5 * (C + C.T)
    w, Y = dense_generalized_eig(C, np.eye(C.shape[0]), method=method, n_eigs=n_eigs)
    Yr = d[:, None] * Y
    return w, Ur @ Yr + Un @ (X @ Yr), int((~keep).sum())


def lanczos_tridiagonal(alphas, betas):
    """Diagonal and off-diagonal of the Lanczos matrix implied by PCG coefficients."""
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    m = alphas.shape[0]
    if m < 2:
        raise ValueError("insufficient Krylov history: need at least 2 CG iterations")
    if betas.shape[0] < m - 1:
        raise ValueError("need len(betas) >= len(alphas) - 1")
    b = betas[:m - 1]
    d = 1.0 / alphas
    d[1:] += b / alphas[:-1]
    e = np.sqrt(b) / alphas[:-1]
    return d, e


def lanczos_extremes(alphas, betas):
    d, e = lanczos_tridiagonal(alphas, betas)
    ev = sla.eigvalsh_tridiagonal(d, e)
    return ev[0], ev[-1]


def lanczos_cond_estimate(alphas, betas) -> float:
    """Condition number ``lambda_max / lambda_min`` of the CG Lanczos matrix."""
    lo, hi = lanczos_extremes(alphas, betas)
    if lo <= 0.0:
        return float("inf")
    return float(hi / lo)

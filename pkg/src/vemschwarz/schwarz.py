"""Additive Schwarz preconditioners (one and two levels) and preconditioned CG."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .linalg import NotSPDError, as_csr, factor_spd, lanczos_cond_estimate, spmv

GRAM_DROP_TOL = 1e-10
ORACLE_MAX_N = 2000


class ConfigurationError(RuntimeError):
    pass


class OneLevel:
    """``M1^-1 r = sum_i R_i^T A_i^-1 R_i r`` summed in subdomain order."""

    def __init__(self, A, index_sets):
        A = as_csr(A)
        self.n = A.shape[0]
        self.index_sets = [np.asarray(ix, dtype=np.int64) for ix in index_sets]
        self.factors = []
        for i, ix in enumerate(self.index_sets):
            try:
                self.factors.append(factor_spd(A[ix][:, ix]))
            except NotSPDError as exc:
                raise ConfigurationError(f"local matrix {i} is not SPD ({exc})") from exc

    def __call__(self, r):
        z = np.zeros(self.n)
        for ix, F in zip(self.index_sets, self.factors):
            z[ix] += F.solve(r[ix])
        return z


class CoarseSolver:
    """``R0^T A0^-1 R0`` with columns dropped where the A-Gram pivot is negligible."""

    def __init__(self, A, R0T, drop_tol=GRAM_DROP_TOL):
        R0T = sp.csc_matrix(R0T)
        self.n_requested = R0T.shape[1]
        AR = (as_csr(A) @ R0T).toarray() if R0T.shape[1] else np.zeros((A.shape[0], 0))
        G = (R0T.T @ AR) if R0T.shape[1] else np.zeros((0, 0))
        G = 0.5 * (G + G.T)
        keep = _gram_keep(G, drop_tol)
        self.dropped = [int(j) for j in np.setdiff1d(np.arange(G.shape[0]), keep)]
        self.keep = keep
        self.R0T = R0T[:, keep].tocsc()
        self.R0 = self.R0T.T.tocsr()
        self.A0 = G[np.ix_(keep, keep)]
        self._chol = np.linalg.cholesky(self.A0) if keep.size else None

    @property
    def dim(self):
        return int(self.keep.size)

    def __call__(self, r):
        if self._chol is None:
            return np.zeros_like(r)
        c = self.R0 @ r
        y = sla.cho_solve((self._chol, True), c)
        return self.R0T @ y


def _gram_keep(G, tol):
    """Column-ordered Cholesky of a Gram matrix, skipping relatively tiny pivots."""
    m = G.shape[0]
    L = np.zeros((m, m))
    keep = []
    for j in range(m):
        if G[j, j] <= 0:
            continue
        k = len(keep)
        row = G[j, keep] if k else np.zeros(0)
        lj = sla.solve_triangular(L[:k, :k], row, lower=True) if k else np.zeros(0)
        d = G[j, j] - lj @ lj
        if d <= tol * G[j, j]:
            continue
        L[k, :k] = lj
        L[k, k] = np.sqrt(d)
        keep.append(j)
    return np.array(keep, dtype=np.int64)


class TwoLevel:
    """``M2^-1 = R0^T A0^-1 R0 + M1^-1``."""

    def __init__(self, one_level: OneLevel, coarse: CoarseSolver):
        self.one_level = one_level
        self.coarse = coarse

    def __call__(self, r):
        return self.coarse(r) + self.one_level(r)


def local_index_sets(overlap, free, n_dofs):
    """Positions of each subdomain's local Dirichlet dofs within the free-dof vector."""
    pos = -np.ones(n_dofs, dtype=np.int64)
    pos[free] = np.arange(free.size)
    sets = []
    for d in overlap.local_dofs:
        ix = pos[d]
        if (ix < 0).any():
            raise ConfigurationError("local dof set contains eliminated dofs")
        sets.append(ix)
    return sets


def build_one_level(system, overlap) -> OneLevel:
    return OneLevel(system.A, local_index_sets(overlap, system.free, system.space.n_dofs))


def build_two_level(one_level: OneLevel, coarse_space, system) -> TwoLevel:
    R0T = getattr(coarse_space, "R0T", coarse_space)
    return TwoLevel(one_level, CoarseSolver(system.A, R0T))


@dataclass
class PCGReport:
    iterations: int
    converged: bool
    residuals: list
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    cond_estimate: float = float("nan")
    seconds: float = 0.0
    dim_coarse: int = 0
    dropped_coarse: list = field(default_factory=list)


def pcg(A, b, M=None, tol=1e-6, max_iter=1000, x0=None):
    """Preconditioned conjugate gradients on SPD ``A``; returns ``(x, PCGReport)``."""
    t0 = time.perf_counter()
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    M = (lambda r: r.copy()) if M is None else M
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), PCGReport(0, True, [0.0], [], [], 1.0, time.perf_counter() - t0)
    r = b - spmv(A, x)
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    res = [float(np.linalg.norm(r)) / bnorm]
    alphas, betas = [], []
    converged = res[-1] <= tol
    it = 0
    while not converged and it < max_iter:
        q = spmv(A, p)
        pq = float(p @ q)
        if not pq > 0.0:
            raise NotSPDError(it, what="operator")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        alphas.append(alpha)
        res.append(float(np.linalg.norm(r)) / bnorm)
        if res[-1] <= tol:
            converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        if not rz_new > 0.0:
            raise NotSPDError(it, what="preconditioner")
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    cond = lanczos_cond_estimate(alphas, betas) if len(alphas) >= 2 else 1.0
    rep = PCGReport(it, converged, res, alphas, betas, cond, time.perf_counter() - t0)
    coarse = getattr(M, "coarse", None)
    if coarse is not None:
        rep.dim_coarse = coarse.dim
        rep.dropped_coarse = list(coarse.dropped)
    return x, rep


def preconditioner_matrix(M, n):
    """Dense matrix of a linear preconditioner, built column by column."""
    P = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        P[:, j] = M(e)
        e[j] = 0.0
    return 0.5 * (P + P.T)


def dense_cond_oracle(A, M=None) -> float:
    """Condition number of ``M^-1 A`` from the dense pencil ``(A P A, A)``."""
    n = A.shape[0]
    if n > ORACLE_MAX_N:
        raise ValueError(f"dense oracle limited to {ORACLE_MAX_N} dofs (got {n})")
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    P = np.eye(n) if M is None else preconditioner_matrix(M, n)
    APA = Ad @ P @ Ad
    w = sla.eigh(0.5 * (APA + APA.T), Ad, eigvals_only=True)
    w = w[w > 1e-14 * w.max()]
    return float(w.max() / w.min())

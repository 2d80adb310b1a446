"""Coarse partition of unity on irregular subdomains and the overlap partition of unity."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .decomposition import CoarseSkeleton, OverlappingPartition
from .linalg import factor_spd
from .vem import monomials

RANK_TOL = 1e-10
ROUNDOFF = 1e-13


class PUWarning(UserWarning):
    pass


def chain_profile(points, y_i, y_j):
    """Clamped projected-arclength profile: 1 at ``y_i``, 0 at ``y_j``."""
    y_i = np.asarray(y_i, dtype=float)
    y_j = np.asarray(y_j, dtype=float)
    L = float(np.hypot(*(y_i - y_j)))
    if L <= 0.0:
        raise ValueError("subdomain edge of zero length")
    d = (y_i - y_j) / L
    t = (np.asarray(points, dtype=float) - y_j) @ d / L
    return np.clip(t, 0.0, 1.0)


def skeleton_dofs(space, skeleton: CoarseSkeleton):
    """Boolean dof mask of the subdomain interfaces and the outer boundary."""
    mesh = space.mesh
    mask = np.zeros(space.n_dofs, dtype=bool)
    mask[:mesh.n_vertices] = skeleton.skeleton_vertex
    if space.k == 2:
        for ch in skeleton.chains:
            mask[mesh.n_vertices + ch.edges] = True
    return mask


def edge_values(space, skeleton: CoarseSkeleton):
    """Values of every generator on the skeleton dofs, as a sparse (n_dofs, N_c) matrix."""
    mesh = space.mesh
    nV = mesh.n_vertices
    rows, cols, vals = [], [], []
    Y = skeleton.coarse_points
    for i, v in enumerate(skeleton.coarse_vertices):
        rows.append(np.array([v]))
        cols.append(np.array([i]))
        vals.append(np.array([1.0]))
    for ch in skeleton.chains:
        a, b = ch.ends
        inner = ch.vertices[1:-1]
        pts = [mesh.vertices[inner]]
        dofs = [inner]
        if space.k == 2:
            pts.append(mesh.edge_midpoints[ch.edges])
            dofs.append(nV + ch.edges)
        pts = np.concatenate(pts)
        dofs = np.concatenate(dofs)
        for gen, other in ((a, b), (b, a)):
            prof = chain_profile(pts, Y[gen], Y[other])
            nz = prof != 0.0
            rows.append(dofs[nz])
            cols.append(np.full(int(nz.sum()), gen))
            vals.append(prof[nz])
    rows, cols, vals = (np.concatenate(x) for x in (rows, cols, vals))
    return sp.csc_matrix((vals, (rows, cols)), shape=(space.n_dofs, skeleton.n_coarse))


def _boundary_weights(space, skeleton, part, bdofs):
    """Trapezoid (k = 1) or Simpson (k = 2) weights of the subdomain boundary dofs."""
    mesh = space.mesh
    ec = mesh.edge_cells
    cp = skeleton.partition.cell_part
    in_p = (cp[ec[:, 0]] == part) | ((ec[:, 1] >= 0) & (cp[np.maximum(ec[:, 1], 0)] == part))
    b_edges = np.concatenate([ch.edges for ch in skeleton.chains])
    b_edges = b_edges[in_p[b_edges]]
    L = mesh.edge_lengths[b_edges]
    w = np.zeros(space.n_dofs)
    end_w = 0.5 if space.k == 1 else 1.0 / 6.0
    np.add.at(w, mesh.edges[b_edges, 0], end_w * L)
    np.add.at(w, mesh.edges[b_edges, 1], end_w * L)
    if space.k == 2:
        w[mesh.n_vertices + b_edges] += 4.0 / 6.0 * L
    return w[bdofs]


def _cell_average_monomials(space, cells, centre, scale, kp):
    """Rows of ``|E|^-1 int_E m_alpha`` for the moment dofs of ``cells``."""
    out = np.zeros((len(cells), (kp + 1) * (kp + 2) // 2))
    pos = {int(c): r for r, c in enumerate(cells)}
    for g in space.groups:
        sel = np.isin(g["cells"], cells)
        if not sel.any():
            continue
        m = monomials((g["qp"][sel] - centre) / scale, kp)
        avg = np.einsum("cq,cqa->ca", g["qw"][sel], m) / g["area"][sel][:, None]
        out[[pos[int(c)] for c in g["cells"][sel]]] = avg
    return out


@dataclass
class PUFamily:
    """Generator functions ``chi_i`` as columns of a sparse (n_dofs, N_c) matrix."""

    chi: sp.csc_matrix
    mode: str
    skeleton: CoarseSkeleton
    space: object
    fallback_parts: list = field(default_factory=list)

    @property
    def n_generators(self):
        return self.chi.shape[1]

    def column(self, i):
        return self.chi[:, i].toarray().ravel()

    def total(self):
        return np.asarray(self.chi.sum(axis=1)).ravel()

    def sum_error(self):
        """Largest deviation of the sum from 1 over dofs not on the outer boundary."""
        inner = ~self.space.boundary_dofs
        return float(np.abs(self.total()[inner] - 1.0).max(initial=0.0))

    def drop_generator(self, i):
        """Copy with generator ``i`` removed (used to check that diagnostics catch it)."""
        keep = [j for j in range(self.n_generators) if j != i]
        return PUFamily(self.chi[:, keep].tocsc(), self.mode, self.skeleton, self.space,
                        list(self.fallback_parts))

    def to_csv(self, i):
        col = self.column(i)
        nz = np.flatnonzero(col)
        xy = self.space.dof_coords[nz]
        lines = ["dof,x,y,value"]
        rows = zip(nz.tolist(), xy.tolist(), col[nz].tolist())
        lines += [f"{d},{x!r},{y!r},{v!r}" for d, (x, y), v in rows]
        return "\n".join(lines) + "\n"


def build_pu(space, skeleton: CoarseSkeleton, mode: str = "harmonic") -> PUFamily:
    """Coarse partition of unity: skeleton profiles extended into each subdomain.

    ``mode`` is ``"harmonic"`` (kappa = 1 discrete harmonic extension) or
    ``"polynomial-2"`` / ``"polynomial-3"`` (boundary least-squares fit).
    """
    if mode == "harmonic":
        kp = None
    elif mode in ("polynomial-2", "polynomial-3"):
        kp = int(mode[-1])
    else:
        raise ValueError(f"unknown PU mode {mode!r}")
    mesh = space.mesh
    part = skeleton.partition
    sk = skeleton_dofs(space, skeleton)
    E = edge_values(space, skeleton).tocsr()
    inc = space.cell_dof_incidence
    blocks = [E]
    fallback = []
    for p in range(part.n_parts):
        cells = part.part_cells[p]
        dofs = np.unique(inc[cells].indices)
        I = dofs[~sk[dofs]]
        B = dofs[sk[dofs]]
        if I.size == 0:
            continue
        gens = np.unique(E[B].indices)
        G = E[B][:, gens].toarray()
        X = None
        if kp is not None:
            X = _polynomial_extension(space, skeleton, p, cells, I, B, G, kp)
            if X is None:
                warnings.warn(f"rank-deficient polynomial fit on subdomain {p}; "
                              "using harmonic extension", PUWarning, stacklevel=2)
                fallback.append(p)
        if X is None:
            mask = np.zeros(mesh.n_cells, dtype=bool)
            mask[cells] = True
            K = space.stiffness(None, cells=mask)
            KI = K[I]
            X = factor_spd(KI[:, I]).solve(-(KI[:, B] @ G))
            # the extension is nonnegative up to solver roundoff
            X[(X < 0.0) & (X > -ROUNDOFF)] = 0.0
        X = np.where(np.abs(X) < 1e-300, 0.0, X)
        r, c = np.nonzero(X)
        blocks.append(sp.csr_matrix((X[r, c], (I[r], gens[c])), shape=E.shape))
    chi = sum(blocks[1:], blocks[0]).tocsc()
    chi.eliminate_zeros()
    return PUFamily(chi, mode, skeleton, space, fallback)


def _polynomial_extension(space, skeleton, p, cells, I, B, G, kp):
    xy = space.dof_coords
    pts = xy[B]
    centre = pts.mean(axis=0)
    scale = max(float(np.ptp(pts, axis=0).max()), 1e-300)
    w = _boundary_weights(space, skeleton, p, B)
    V = monomials((pts - centre) / scale, kp)
    sw = np.sqrt(w)[:, None]
    Vw = V * sw
    s = np.linalg.svd(Vw, compute_uv=False)
    if s.size < V.shape[1] or s[-1] <= RANK_TOL * s[0]:
        return None
    coef, *_ = np.linalg.lstsq(Vw, G * sw, rcond=None)
    rows = monomials((xy[I] - centre) / scale, kp)
    moment = space.dof_kind[I] == 2
    if moment.any():
        nV = space.mesh.n_vertices + (space.mesh.n_edges if space.k == 2 else 0)
        rows[moment] = _cell_average_monomials(space, I[moment] - nV, centre, scale, kp)
    return rows @ coef


@dataclass
class OverlapPU:
    """Overlap partition of unity ``xi_j`` as columns of a sparse (n_dofs, N_S) matrix."""

    xi: sp.csc_matrix
    weights: sp.csc_matrix

    def column(self, j):
        return self.xi[:, j].toarray().ravel()


def overlap_pu(overlap: OverlappingPartition, space) -> OverlapPU:
    """``xi_j = w_j / sum_l w_l`` with ``w_j`` decaying linearly over the overlap layers."""
    L = overlap.layers
    inc = space.cell_dof_incidence.tocoo()
    per_dof = np.bincount(inc.col, minlength=space.n_dofs)
    cols = []
    for j in range(overlap.n_parts):
        layer = overlap.cell_layer[j]
        inside = layer[inc.row] >= 0
        cnt = np.bincount(inc.col[inside], minlength=space.n_dofs)
        ell = np.full(space.n_dofs, L + 1)
        np.minimum.at(ell, inc.col[inside], layer[inc.row[inside]])
        w = np.where(cnt == per_dof, (L + 1.0 - ell) / (L + 1.0), 0.0)
        cols.append(sp.csc_matrix(w[:, None]))
    W = sp.hstack(cols).tocsc()
    total = np.asarray(W.sum(axis=1)).ravel()
    if (total <= 0).any():
        raise ValueError("dof covered by no overlapped subdomain")
    Xi = sp.diags(1.0 / total) @ W
    return OverlapPU(sp.csc_matrix(Xi), W)

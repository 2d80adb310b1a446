"""Virtual element discretization (degree 1 and 2) of -div(kappa grad u) = f.

Local quantities are computed in batches of cells that share a vertex
count. Monomials are scaled, ``m(x) = ((x - x_E) / h_E)^alpha``, with
``x_E`` the centroid and ``h_E`` the diameter of the cell.

Local dof order: vertices (cell loop order), then for ``k = 2`` the edge
midpoints (edge ``j`` joins local vertices ``j`` and ``j + 1``) and the cell
moment ``|E|^-1 int_E v``. Global numbering: vertices, edges, cells.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr, factor_spd, symmetrize
from .mesh import PolygonalMesh

MIN_AREA = 1e-14

# 6-point degree-4 triangle rule (barycentric points, weights summing to 1)
_A, _B = 0.44594849091596488632, 0.09157621350977074346
_WA, _WB = 0.22338158967801146570, 0.10995174365532186764
TRI_BARY = np.array([
    [_A, _A, 1 - 2 * _A], [_A, 1 - 2 * _A, _A], [1 - 2 * _A, _A, _A],
    [_B, _B, 1 - 2 * _B], [_B, 1 - 2 * _B, _B], [1 - 2 * _B, _B, _B],
])
TRI_W = np.array([_WA, _WA, _WA, _WB, _WB, _WB])
TRI_W = TRI_W / TRI_W.sum()


class DegenerateCellError(ValueError):
    pass


def n_monomials(k):
    return (k + 1) * (k + 2) // 2


def monomials(s, k):
    """Scaled monomials at scaled points ``s`` (..., 2) -> (..., n_k)."""
    x, y = s[..., 0], s[..., 1]
    cols = [np.ones_like(x), x, y]
    if k >= 2:
        cols += [x * x, x * y, y * y]
    if k >= 3:
        cols += [x ** 3, x * x * y, x * y * y, y ** 3]
    return np.stack(cols, axis=-1)


def monomial_gradients(s, k, h):
    """Gradients in physical coordinates, shape (..., n_k, 2)."""
    x, y = s[..., 0], s[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    gx = [z, o, z]
    gy = [z, z, o]
    if k >= 2:
        gx += [2 * x, y, z]
        gy += [z, x, 2 * y]
    h = np.asarray(h)[(...,) + (None,) * (x.ndim - np.ndim(h))]
    return np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=-1) / h[..., None, None]


def n_local_dofs(n, k):
    return n if k == 1 else 2 * n + 1


def cell_quadrature(P):
    """Fan sub-triangulation rule on cells ``P`` (c, n, 2).

    Returns points (c, 6n, 2), signed weights (c, 6n), areas and centroids.
    """
    c, n, _ = P.shape
    Pn = np.roll(P, -1, axis=1)
    # shoelace relative to the first vertex to avoid cancellation
    o = P[:, :1, :]
    Q, Qn = P - o, Pn - o
    cross = Q[..., 0] * Qn[..., 1] - Qn[..., 0] * Q[..., 1]
    area = 0.5 * cross.sum(axis=1)
    if (area < MIN_AREA).any():
        raise DegenerateCellError(f"cell area below {MIN_AREA:g}")
    cen = o[:, 0, :] + ((Q + Qn) * cross[..., None]).sum(axis=1) / (6.0 * area)[:, None]
    a = P - cen[:, None, :]
    b = Pn - cen[:, None, :]
    tri_area = 0.5 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    pts = (cen[:, None, None, :] * TRI_BARY[None, None, :, 0, None]
           + P[:, :, None, :] * TRI_BARY[None, None, :, 1, None]
           + Pn[:, :, None, :] * TRI_BARY[None, None, :, 2, None])
    wts = tri_area[:, :, None] * TRI_W[None, None, :]
    return pts.reshape(c, 6 * n, 2), wts.reshape(c, 6 * n), area, cen


def local_batch(P, k):
    """Projectors and local matrices for equal-size cells ``P`` (c, n, 2), kappa = 1.

    The stiffness is ``Pi*^T G~ Pi* + (I - D Pi*)^T (I - D Pi*)`` with
    ``Pi* = G^-1 B`` the coefficients of the energy projection; the mass
    matrix uses the L2 projection of the enhanced space and a stabilization
    scaled by ``|E| / N``.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    P = np.asarray(P, dtype=float)
    c, n, _ = P.shape
    nk = n_monomials(k)
    N = n_local_dofs(n, k)
    qp, qw, area, cen = cell_quadrature(P)
    diff = P[:, :, None, :] - P[:, None, :, :]
    diam = np.sqrt((diff ** 2).sum(-1)).reshape(c, -1).max(axis=1)
    scale = lambda x: (x - cen[:, None, :]) / diam[:, None, None]
    mq = monomials(scale(qp), k)
    H = np.einsum("cq,cqa,cqb->cab", qw, mq, mq)
    Pn = np.roll(P, -1, axis=1)
    nu = np.stack([Pn[..., 1] - P[..., 1], P[..., 0] - Pn[..., 0]], axis=-1)

    D = np.empty((c, N, nk))
    D[:, :n] = monomials(scale(P), k)
    B = np.zeros((c, nk, N))
    if k == 1:
        B[:, 0, :] = 1.0 / n
        nsum = nu + np.roll(nu, 1, axis=1)
        B[:, 1, :] = 0.5 * nsum[..., 0] / diam[:, None]
        B[:, 2, :] = 0.5 * nsum[..., 1] / diam[:, None]
    else:
        mid = 0.5 * (P + Pn)
        D[:, n:2 * n] = monomials(scale(mid), k)
        D[:, 2 * n] = np.einsum("cq,cqa->ca", qw, mq) / area[:, None]
        gv = monomial_gradients(scale(P), k, diam)
        gm = monomial_gradients(scale(mid), k, diam)
        start = np.einsum("cjad,cjd->caj", gv, nu)
        end = np.einsum("cjad,cjd->caj", np.roll(gv, -1, axis=1), nu)
        B[:, :, :n] = (start + np.roll(end, 1, axis=2)) / 6.0
        B[:, :, n:2 * n] = 4.0 / 6.0 * np.einsum("cjad,cjd->caj", gm, nu)
        lap = np.array([0.0, 0.0, 0.0, 2.0, 0.0, 2.0])
        B[:, :, 2 * n] -= lap[None, :] / diam[:, None] ** 2 * area[:, None]
        B[:, 0, :] = 0.0
        B[:, 0, 2 * n] = 1.0

    G = B @ D
    PiS = np.linalg.solve(G, B)
    Gt = G.copy()
    Gt[:, 0, :] = 0.0
    I = np.eye(N)
    R = I - D @ PiS
    K = np.swapaxes(PiS, 1, 2) @ Gt @ PiS + np.swapaxes(R, 1, 2) @ R

    if k == 1:
        Pi0S = PiS
    else:
        C = H @ PiS
        C[:, 0, :] = 0.0
        C[:, 0, 2 * n] = area
        Pi0S = np.linalg.solve(H, C)
    R0 = I - D @ Pi0S
    M = (np.swapaxes(Pi0S, 1, 2) @ H @ Pi0S
         + (area / N)[:, None, None] * (np.swapaxes(R0, 1, 2) @ R0))
    return dict(K=0.5 * (K + np.swapaxes(K, 1, 2)), M=0.5 * (M + np.swapaxes(M, 1, 2)),
                PiS=PiS, Pi0S=Pi0S, B=B, D=D, G=G, Gt=Gt, H=H, area=area, centroid=cen,
                diam=diam, qp=qp, qw=qw, mq=mq)


def local_projector(poly, k):
    """Monomial coefficients (n_k, N) of the energy projection of each basis function."""
    return local_batch(np.asarray(poly, dtype=float)[None], k)["PiS"][0]


def local_stiffness(poly, k, kappa_e=1.0):
    if kappa_e <= 0:
        raise ValueError("kappa_e must be positive")
    return kappa_e * local_batch(np.asarray(poly, dtype=float)[None], k)["K"][0]


def local_load(poly, k, f):
    """``int_E f Pi0 phi_i`` (k = 2) or ``|V|^-1 int_E f`` (k = 1)."""
    loc = local_batch(np.asarray(poly, dtype=float)[None], k)
    return _load_from_batch(loc, k, f)[0]


def _load_from_batch(loc, k, f):
    qp, qw = loc["qp"], loc["qw"]
    fq = np.asarray(f(qp[..., 0], qp[..., 1]), dtype=float) * np.ones(qw.shape)
    if k == 1:
        n = loc["D"].shape[1]
        return np.repeat(((qw * fq).sum(axis=1) / n)[:, None], n, axis=1)
    moments = np.einsum("cq,cq,cqa->ca", qw, fq, loc["mq"])
    return np.einsum("ca,cai->ci", moments, loc["Pi0S"])


class VEMSpace:
    """Global dof map and cached kappa = 1 local matrices on one mesh."""

    def __init__(self, mesh: PolygonalMesh, k: int):
        if k not in (1, 2):
            raise ValueError("k must be 1 or 2")
        self.mesh = mesh
        self.k = k
        nV, nE, nC = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        self.n_dofs = nV if k == 1 else nV + nE + nC
        coords = [mesh.vertices]
        bnd = [mesh.boundary_vertex]
        kind = [np.zeros(nV, dtype=np.int8)]
        if k == 2:
            coords += [mesh.edge_midpoints, mesh.cell_centroids]
            bnd += [mesh.boundary_edge, np.zeros(nC, dtype=bool)]
            kind += [np.ones(nE, dtype=np.int8), np.full(nC, 2, dtype=np.int8)]
        self.dof_coords = np.concatenate(coords)
        self.boundary_dofs = np.concatenate(bnd)
        self.dof_kind = np.concatenate(kind)  # 0 vertex, 1 edge, 2 cell moment
        self.groups = []
        for n, cells in mesh.size_groups.items():
            vid, eid = mesh.group_arrays(cells)
            loc = local_batch(mesh.vertices[vid], k)
            if k == 1:
                dofs = vid
            else:
                dofs = np.concatenate([vid, nV + eid, (nV + nE + cells)[:, None]], axis=1)
            loc["cells"] = cells
            loc["dofs"] = dofs
            self.groups.append(loc)
        self._cell_dof_incidence = None

    # -- global assembly ------------------------------------------------------
    def _assemble(self, key, weights=None, cells=None):
        rows, cols, vals = [], [], []
        for g in self.groups:
            sel = slice(None) if cells is None else cells[g["cells"]]
            loc = g[key][sel]
            if weights is not None:
                loc = loc * np.asarray(weights)[g["cells"][sel]][:, None, None]
            d = g["dofs"][sel]
            N = d.shape[1]
            rows.append(np.repeat(d, N, axis=1).ravel())
            cols.append(np.tile(d, (1, N)).ravel())
            vals.append(loc.ravel())
        rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
        order = np.argsort(self._cell_order(rows.size, cells), kind="stable")
        A = sp.coo_matrix((vals[order], (rows[order], cols[order])),
                          shape=(self.n_dofs, self.n_dofs))
        return symmetrize(A)

    def _cell_order(self, size, cells):
        # owner cell of each scattered entry, so sums follow cell order
        owner = []
        for g in self.groups:
            c = g["cells"] if cells is None else g["cells"][cells[g["cells"]]]
            N = g["dofs"].shape[1]
            owner.append(np.repeat(c, N * N))
        return np.concatenate(owner) if owner else np.zeros(size, dtype=np.int64)

    def stiffness(self, kappa=None, cells=None):
        """Neumann stiffness over all dofs; ``cells`` is an optional boolean cell mask."""
        return self._assemble("K", kappa, cells)

    def mass(self, weights=None, cells=None):
        return self._assemble("M", weights, cells)

    def load(self, f):
        b = np.zeros(self.n_dofs)
        for g in self.groups:
            contrib = _load_from_batch(g, self.k, f)
            order = np.argsort(np.repeat(g["cells"], contrib.shape[1]), kind="stable")
            np.add.at(b, g["dofs"].ravel()[order], contrib.ravel()[order])
        return b

    def interpolate(self, u):
        """Dof values of a function ``u(x, y)``."""
        vals = np.empty(self.n_dofs)
        nV = self.mesh.n_vertices
        pts = self.dof_coords
        if self.k == 1:
            vals[:] = u(pts[:, 0], pts[:, 1])
            return vals
        nE = self.mesh.n_edges
        vals[:nV + nE] = u(pts[:nV + nE, 0], pts[:nV + nE, 1])
        for g in self.groups:
            q = g["qp"]
            vals[nV + nE + g["cells"]] = (g["qw"] * u(q[..., 0], q[..., 1])).sum(1) / g["area"]
        return vals

    def cell_dofs(self, c):
        for g in self.groups:
            pos = np.searchsorted(g["cells"], c)
            if pos < len(g["cells"]) and g["cells"][pos] == c:
                return g["dofs"][pos]
        raise IndexError(c)

    @property
    def cell_dof_incidence(self):
        """Sparse (n_cells, n_dofs) 0/1 incidence."""
        if self._cell_dof_incidence is None:
            r = np.concatenate([np.repeat(g["cells"], g["dofs"].shape[1]) for g in self.groups])
            c = np.concatenate([g["dofs"].ravel() for g in self.groups])
            self._cell_dof_incidence = sp.csr_matrix(
                (np.ones(r.size), (r, c)), shape=(self.mesh.n_cells, self.n_dofs))
        return self._cell_dof_incidence

    def cell_energy(self, V):
        """Per-cell ``int_E |grad Pi v|^2`` for columns of ``V`` (n_dofs, m) -> (n_cells, m)."""
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        V = V.reshape(self.n_dofs, -1)
        out = np.zeros((self.mesh.n_cells, V.shape[1]))
        for g in self.groups:
            coef = np.einsum("cai,cim->cam", g["PiS"], V[g["dofs"]])
            out[g["cells"]] = np.einsum("cam,cab,cbm->cm", coef, g["Gt"], coef)
        return out[:, 0] if vec else out

    def projected_gradients(self, v):
        """Cell-wise gradient of ``Pi v`` at the centroid (exact for k = 1)."""
        out = np.zeros((self.mesh.n_cells, 2))
        for g in self.groups:
            coef = np.einsum("cai,ci->ca", g["PiS"], v[g["dofs"]])
            out[g["cells"], 0] = coef[:, 1] / g["diam"]
            out[g["cells"], 1] = coef[:, 2] / g["diam"]
        return out


_SPACES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def vem_space(mesh: PolygonalMesh, k: int) -> VEMSpace:
    """Build (or fetch the cached) space of degree ``k`` on ``mesh``."""
    per_mesh = _SPACES.setdefault(mesh, {})
    if k not in per_mesh:
        per_mesh[k] = VEMSpace(mesh, k)
    return per_mesh[k]


@dataclass
class GlobalSystem:
    """Dirichlet-eliminated system ``A u_f = b`` on the free dofs."""

    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray           # global dof ids of the unknowns
    dirichlet: np.ndarray      # boolean mask over all dofs
    g: np.ndarray              # Dirichlet values over all dofs (zero on free dofs)
    space: VEMSpace
    kappa: np.ndarray
    A_full: sp.csr_matrix

    @property
    def n(self):
        return self.A.shape[0]

    def expand(self, u_free):
        u = self.g.copy()
        u[self.free] = u_free
        return u

    def solve_direct(self):
        return self.expand(factor_spd(self.A).solve(self.b))


def assemble_global(mesh: PolygonalMesh, field=None, k: int = 1, f=None, g=None) -> GlobalSystem:
    """Assemble and eliminate Dirichlet dofs on the whole boundary.

    ``field`` is a :class:`CoefficientField` (or per-cell array, or None for
    kappa = 1); ``f`` and ``g`` are callables ``(x, y)`` (default zero).
    """
    space = vem_space(mesh, k)
    if field is None:
        kappa = np.ones(mesh.n_cells)
    else:
        kappa = np.asarray(getattr(field, "values", field), dtype=float)
    if kappa.shape != (mesh.n_cells,) or (kappa <= 0).any():
        raise ValueError("kappa must be positive with one value per cell")
    A_full = space.stiffness(kappa)
    b_full = space.load(f) if f is not None else np.zeros(space.n_dofs)
    dir_mask = space.boundary_dofs.copy()
    gvals = np.zeros(space.n_dofs)
    if g is not None:
        gvals[dir_mask] = space.interpolate(g)[dir_mask]
    free = np.flatnonzero(~dir_mask)
    bnd = np.flatnonzero(dir_mask)
    assert free.size + bnd.size == space.n_dofs
    A_fb = A_full[free][:, bnd]
    A = as_csr(A_full[free][:, free])
    b = b_full[free] - A_fb @ gvals[bnd]
    return GlobalSystem(A, b, free, dir_mask, gvals, space, kappa, A_full)

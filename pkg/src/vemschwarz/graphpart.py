"""Multilevel recursive-bisection graph partitioner.

Coarsening by heavy-edge matching, greedy graph-growing initial bisection,
Fiduccia-Mattheyses boundary refinement on the way back up. Parts are then
made connected and rebalanced. All randomness comes from one seeded
generator, so the output depends only on the graph and the seed.
"""

from __future__ import annotations

import heapq

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

COARSEST = 60
BISECT_TOL = 0.01
FM_PASSES = 6
FM_STALL = 60
N_TRIES = 6


class _Graph:
    __slots__ = ("indptr", "indices", "ew", "vw", "n")

    def __init__(self, A, vw):
        A = sp.csr_matrix(A)
        A.setdiag(0)
        A.eliminate_zeros()
        A.sort_indices()
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        self.ew = A.data.astype(float)
        self.vw = np.asarray(vw, dtype=float)
        self.n = A.shape[0]

    def matrix(self):
        return sp.csr_matrix((self.ew, self.indices, self.indptr), shape=(self.n, self.n))


def _heavy_edge_matching(g, rng):
    match = -np.ones(g.n, dtype=np.int64)
    indptr, indices, ew = g.indptr, g.indices, g.ew
    for v in rng.permutation(g.n):
        if match[v] >= 0:
            continue
        best, bw = -1, -1.0
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            if match[u] < 0 and ew[p] > bw:
                best, bw = u, ew[p]
        if best >= 0:
            match[v] = best
            match[best] = v
        else:
            match[v] = v
    rep = np.minimum(np.arange(g.n), match)
    _, cmap = np.unique(rep, return_inverse=True)
    return cmap


def _coarsen(g, cmap):
    nc = int(cmap.max()) + 1
    P = sp.csr_matrix((np.ones(g.n), (np.arange(g.n), cmap)), shape=(g.n, nc))
    Ac = (P.T @ g.matrix() @ P).tocsr()
    return _Graph(Ac, P.T @ g.vw)


def _cut(g, side):
    rows = np.repeat(np.arange(g.n), np.diff(g.indptr))
    return 0.5 * g.ew[side[rows] != side[g.indices]].sum()


def _violation(w0, target, tol):
    return max(0.0, abs(w0 - target) - tol)


def _grow(g, start, target):
    """Greedy graph growing: absorb the frontier vertex that most reduces the cut."""
    side = np.ones(g.n, dtype=np.int8)
    gain = np.zeros(g.n)
    heap = [(0.0, int(start))]
    w0 = 0.0
    indptr, indices, ew = g.indptr, g.indices, g.ew
    while heap and w0 < target:
        _, v = heapq.heappop(heap)
        if side[v] == 0:
            continue
        if w0 + g.vw[v] > target and abs(w0 + g.vw[v] - target) > abs(w0 - target):
            break
        side[v] = 0
        w0 += g.vw[v]
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            if side[u]:
                gain[u] += 2 * ew[p]
                heapq.heappush(heap, (-gain[u], int(u)))
        if not heap and w0 < target:
            rest = np.flatnonzero(side)
            if rest.size:
                heapq.heappush(heap, (0.0, int(rest[0])))
    return side


def _fm_refine(g, side, target, tol):
    indptr, indices, ew, vw = g.indptr, g.indices, g.ew, g.vw
    rows = np.repeat(np.arange(g.n), np.diff(indptr))
    for _ in range(FM_PASSES):
        same = side[rows] == side[indices]
        ext = np.bincount(rows, weights=ew * ~same, minlength=g.n)
        inn = np.bincount(rows, weights=ew * same, minlength=g.n)
        gain = ext - inn
        w0 = vw[side == 0].sum()
        cut = 0.5 * ext.sum()
        locked = np.zeros(g.n, dtype=bool)
        heap = [(-gain[v], int(v)) for v in np.flatnonzero(ext > 0)]
        if _violation(w0, target, tol) > 0:
            heavy = 0 if w0 > target else 1
            heap += [(-gain[v], int(v)) for v in np.flatnonzero((side == heavy) & (ext == 0))]
        heapq.heapify(heap)
        best = (_violation(w0, target, tol), cut)
        start = best
        moves, best_len, since = [], 0, 0
        while heap and since < FM_STALL:
            ng, v = heapq.heappop(heap)
            if locked[v] or -ng != gain[v]:
                continue
            nw0 = w0 - vw[v] if side[v] == 0 else w0 + vw[v]
            if _violation(nw0, target, tol) > _violation(w0, target, tol) and \
                    _violation(nw0, target, tol) > 0:
                continue
            locked[v] = True
            side[v] ^= 1
            w0 = nw0
            cut -= gain[v]
            moves.append(v)
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                gain[u] += -2 * ew[p] if side[u] == side[v] else 2 * ew[p]
                if not locked[u]:
                    heapq.heappush(heap, (-gain[u], int(u)))
            state = (_violation(w0, target, tol), cut)
            if state < best:
                best, best_len, since = state, len(moves), 0
            else:
                since += 1
        for v in moves[best_len:]:
            side[v] ^= 1
        if best >= start:
            break
    return side


def _bisect(g, frac, rng):
    total = g.vw.sum()
    target = frac * total
    levels = [g]
    maps = []
    while levels[-1].n > COARSEST:
        cmap = _heavy_edge_matching(levels[-1], rng)
        if cmap.max() + 1 > 0.9 * levels[-1].n:
            break
        maps.append(cmap)
        levels.append(_coarsen(levels[-1], cmap))
    cg = levels[-1]
    tol = max(BISECT_TOL * total, cg.vw.max())
    best = None
    for start in rng.choice(cg.n, size=min(N_TRIES, cg.n), replace=False):
        side = _fm_refine(cg, _grow(cg, start, target), target, tol)
        key = (_violation(cg.vw[side == 0].sum(), target, tol), _cut(cg, side))
        if best is None or key < best[0]:
            best = (key, side)
    side = best[1]
    for lvl in range(len(maps) - 1, -1, -1):
        side = side[maps[lvl]].copy()
        fine = levels[lvl]
        tol = max(BISECT_TOL * total, fine.vw.max())
        side = _fm_refine(fine, side, target, tol)
    return side


def _recursive(A, vw, nodes, k, offset, parts, rng):
    if k == 1:
        parts[nodes] = offset
        return
    k1 = k // 2
    sub = _Graph(A[nodes][:, nodes], vw[nodes])
    side = _bisect(sub, k1 / k, rng)
    _recursive(A, vw, nodes[side == 0], k1, offset, parts, rng)
    _recursive(A, vw, nodes[side == 1], k - k1, offset + k1, parts, rng)


def _part_components(A, parts, p):
    idx = np.flatnonzero(parts == p)
    ncomp, lab = connected_components(A[idx][:, idx], directed=False)
    return idx, ncomp, lab


def make_connected(A, parts, n_parts):
    """Reassign stray components of each part to the neighbouring part they touch most."""
    A = sp.csr_matrix(A)
    for _ in range(50):
        changed = False
        for p in range(n_parts):
            idx, ncomp, lab = _part_components(A, parts, p)
            if ncomp <= 1:
                continue
            sizes = np.bincount(lab)
            keep = int(np.argmax(sizes))
            for c in range(ncomp):
                if c == keep:
                    continue
                comp = idx[lab == c]
                nb = A[comp].tocoo()
                other = parts[nb.col]
                mask = other != p
                if not mask.any():
                    continue
                votes = np.bincount(other[mask], weights=nb.data[mask], minlength=n_parts)
                parts[comp] = int(np.argmax(votes))
                changed = True
        if not changed:
            break
    return parts


def _still_connected(A, parts, p, v):
    idx = np.flatnonzero((parts == p) & (np.arange(len(parts)) != v))
    if idx.size == 0:
        return False
    ncomp, _ = connected_components(A[idx][:, idx], directed=False)
    return ncomp == 1


def rebalance(A, parts, n_parts, vw, limit):
    """Move boundary cells out of overweight parts without disconnecting anything."""
    A = sp.csr_matrix(A)
    cap = limit * vw.sum() / n_parts
    for _ in range(10 * len(parts)):
        w = np.bincount(parts, weights=vw, minlength=n_parts)
        p = int(np.argmax(w))
        if w[p] <= cap:
            break
        moved = False
        idx = np.flatnonzero(parts == p)
        cand = []
        for v in idx:
            nbrs = A.indices[A.indptr[v]:A.indptr[v + 1]]
            others = parts[nbrs][parts[nbrs] != p]
            if others.size:
                q = int(np.bincount(others).argmax())
                cand.append((w[q], -int((parts[nbrs] == q).sum()), int(v), q))
        for _, _, v, q in sorted(cand):
            if w[q] + vw[v] >= w[p]:
                continue
            if _still_connected(A, parts, p, v):
                parts[v] = q
                moved = True
                break
        if not moved:
            break
    return parts


def partition(A, n_parts, seed=0, vw=None, balance=1.10):
    """Partition nodes of the symmetric adjacency ``A`` into ``n_parts`` parts."""
    A = sp.csr_matrix(A, dtype=float)
    n = A.shape[0]
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if n_parts > n:
        raise ValueError(f"n_parts={n_parts} exceeds the number of nodes ({n})")
    vw = np.ones(n) if vw is None else np.asarray(vw, dtype=float)
    parts = np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    _recursive(A, vw, np.arange(n), n_parts, 0, parts, rng)
    parts = make_connected(A, parts, n_parts)
    parts = rebalance(A, parts, n_parts, vw, balance)
    return parts

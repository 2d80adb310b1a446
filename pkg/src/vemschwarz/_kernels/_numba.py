"""Compiled inner loops. Signatures mirror ``_numpy`` exactly."""

import numpy as np
from numba import njit

MAX_POLY = 64


@njit(cache=True)
def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    y = np.zeros(n)
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        y[i] = s
    return y


@njit(cache=True)
def envelope_factor(first, ptr, vals):
    """In-place row-oriented envelope Cholesky. Returns failing row or -1."""
    n = first.shape[0]
    for i in range(n):
        fi = first[i]
        pi = ptr[i]
        for j in range(fi, i):
            fj = first[j]
            pj = ptr[j]
            k0 = fi if fi > fj else fj
            s = vals[pi + j - fi]
            for k in range(k0, j):
                s -= vals[pi + k - fi] * vals[pj + k - fj]
            vals[pi + j - fi] = s / vals[pj + j - fj]
        s = vals[pi + i - fi]
        for k in range(fi, i):
            v = vals[pi + k - fi]
            s -= v * v
        if not (s > 0.0):
            return i
        vals[pi + i - fi] = np.sqrt(s)
    return -1


@njit(cache=True)
def envelope_solve(first, ptr, vals, b):
    n, m = b.shape
    x = b.copy()
    for i in range(n):
        fi = first[i]
        pi = ptr[i]
        d = vals[pi + i - fi]
        for c in range(m):
            s = x[i, c]
            for k in range(fi, i):
                s -= vals[pi + k - fi] * x[k, c]
            x[i, c] = s / d
    for i in range(n - 1, -1, -1):
        fi = first[i]
        pi = ptr[i]
        d = vals[pi + i - fi]
        for c in range(m):
            xi = x[i, c] / d
            x[i, c] = xi
            for k in range(fi, i):
                x[k, c] -= vals[pi + k - fi] * xi
    return x


@njit(cache=True)
def _offdiag_norm(a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return np.sqrt(s)


@njit(cache=True)
def jacobi_eigh(a, rounds, tol, max_sweeps):
    """Round-robin cyclic Jacobi on a symmetric matrix (modified in place).

    ``rounds`` has shape (n_rounds, n_pairs, 2); pairs reaching past ``n``
    are padding. Each round applies all column rotations, then all row
    rotations, so the result matches the vectorized fallback.
    """
    n = a.shape[0]
    v = np.eye(n)
    nrm = np.sqrt(np.sum(a * a))
    off = _offdiag_norm(a)
    sweeps = 0
    npairs = rounds.shape[1]
    cs = np.empty(npairs)
    sn = np.empty(npairs)
    while off > tol * nrm and sweeps < max_sweeps:
        for r in range(rounds.shape[0]):
            for k in range(npairs):
                p = rounds[r, k, 0]
                q = rounds[r, k, 1]
                cs[k] = 1.0
                sn[k] = 0.0
                if q >= n:
                    continue
                apq = a[p, q]
                if apq != 0.0:
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    cs[k] = c
                    sn[k] = t * c
            for k in range(npairs):
                p = rounds[r, k, 0]
                q = rounds[r, k, 1]
                if q >= n or sn[k] == 0.0:
                    continue
                c = cs[k]
                s = sn[k]
                for i in range(n):
                    ap = a[i, p]
                    aq = a[i, q]
                    a[i, p] = ap * c - aq * s
                    a[i, q] = ap * s + aq * c
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = vp * c - vq * s
                    v[i, q] = vp * s + vq * c
            for k in range(npairs):
                p = rounds[r, k, 0]
                q = rounds[r, k, 1]
                if q >= n or sn[k] == 0.0:
                    continue
                c = cs[k]
                s = sn[k]
                for j in range(n):
                    ap = a[p, j]
                    aq = a[q, j]
                    a[p, j] = c * ap - s * aq
                    a[q, j] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
        sweeps += 1
        off = _offdiag_norm(a)
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps, off


@njit(cache=True)
def _clip(px, py, m, ax, ay, bx, by, cx, cy, ox, oy):
    # keep points with (x - c) . (b - a) <= 0
    dx = bx - ax
    dy = by - ay
    k = 0
    for i in range(m):
        j = (i + 1) % m
        fi = (px[i] - cx) * dx + (py[i] - cy) * dy
        fj = (px[j] - cx) * dx + (py[j] - cy) * dy
        if fi <= 0.0:
            ox[k] = px[i]
            oy[k] = py[i]
            k += 1
        if (fi <= 0.0) != (fj <= 0.0):
            t = fi / (fi - fj)
            ox[k] = px[i] + t * (px[j] - px[i])
            oy[k] = py[i] + t * (py[j] - py[i])
            k += 1
    return k


@njit(cache=True)
def clip_voronoi_cells(seeds, nbr_ptr, nbr_idx):
    """Clip the unit square by bisector half-planes of each seed's neighbours."""
    n = seeds.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    out = np.empty((n, MAX_POLY, 2))
    px = np.empty(MAX_POLY)
    py = np.empty(MAX_POLY)
    ox = np.empty(MAX_POLY)
    oy = np.empty(MAX_POLY)
    for i in range(n):
        px[0] = 0.0
        py[0] = 0.0
        px[1] = 1.0
        py[1] = 0.0
        px[2] = 1.0
        py[2] = 1.0
        px[3] = 0.0
        py[3] = 1.0
        m = 4
        sx = seeds[i, 0]
        sy = seeds[i, 1]
        for p in range(nbr_ptr[i], nbr_ptr[i + 1]):
            j = nbr_idx[p]
            tx = seeds[j, 0]
            ty = seeds[j, 1]
            m = _clip(px, py, m, sx, sy, tx, ty, 0.5 * (sx + tx), 0.5 * (sy + ty), ox, oy)
            for q in range(m):
                px[q] = ox[q]
                py[q] = oy[q]
            if m == 0:
                break
        counts[i] = m
        for q in range(m):
            out[i, q, 0] = px[q]
            out[i, q, 1] = py[q]
    return counts, out

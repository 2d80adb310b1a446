"""Pure-numpy versions of the compiled kernels (no numba required)."""

import numpy as np

MAX_POLY = 64


def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    prod = data * x[indices]
    y = np.zeros(n)
    nonempty = indptr[:-1] < indptr[1:]
    if prod.size:
        y[nonempty] = np.add.reduceat(prod, indptr[:-1][nonempty])
    return y


def envelope_factor(first, ptr, vals):
    n = first.shape[0]
    for i in range(n):
        fi = int(first[i])
        pi = int(ptr[i])
        row = vals[pi:pi + i - fi + 1]
        for j in range(fi, i):
            fj = int(first[j])
            pj = int(ptr[j])
            k0 = max(fi, fj)
            s = row[j - fi] - row[k0 - fi:j - fi] @ vals[pj + k0 - fj:pj + j - fj]
            row[j - fi] = s / vals[pj + j - fj]
        s = row[i - fi] - row[:i - fi] @ row[:i - fi]
        if not (s > 0.0):
            return i
        row[i - fi] = np.sqrt(s)
    return -1


def envelope_solve(first, ptr, vals, b):
    n = b.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(n):
        fi = int(first[i])
        pi = int(ptr[i])
        x[i] = (x[i] - vals[pi:pi + i - fi] @ x[fi:i]) / vals[pi + i - fi]
    for i in range(n - 1, -1, -1):
        fi = int(first[i])
        pi = int(ptr[i])
        x[i] /= vals[pi + i - fi]
        x[fi:i] -= np.outer(vals[pi:pi + i - fi], x[i])
    return x


def _offdiag_norm(a):
    return np.linalg.norm(a - np.diag(np.diag(a)))


def jacobi_eigh(a, rounds, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    nrm = np.sqrt(np.sum(a * a))
    off = _offdiag_norm(a)
    sweeps = 0
    valid = [rnd[rnd[:, 1] < n] for rnd in rounds]
    while off > tol * nrm and sweeps < max_sweeps:
        for rnd in valid:
            p = rnd[:, 0]
            q = rnd[:, 1]
            apq = a[p, q]
            act = apq != 0.0
            if not act.any():
                continue
            p = p[act]
            q = q[act]
            apq = apq[act]
            with np.errstate(over="ignore"):
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                root = np.sqrt(1.0 + tau * tau)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + root)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ap = a[:, p].copy()
            aq = a[:, q].copy()
            a[:, p] = ap * c - aq * s
            a[:, q] = ap * s + aq * c
            vp = v[:, p].copy()
            vq = v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
            ap = a[p, :].copy()
            aq = a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
        sweeps += 1
        off = _offdiag_norm(a)
    return np.diag(a).copy(), v, sweeps, off


def _clip(poly, a, b):
    d = b - a
    c = 0.5 * (a + b)
    f = (poly - c) @ d
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        if f[i] <= 0.0:
            out.append(poly[i])
        if (f[i] <= 0.0) != (f[j] <= 0.0):
            t = f[i] / (f[i] - f[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out).reshape(-1, 2)


def clip_voronoi_cells(seeds, nbr_ptr, nbr_idx):
    n = seeds.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    out = np.empty((n, MAX_POLY, 2))
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    for i in range(n):
        poly = square
        for j in nbr_idx[nbr_ptr[i]:nbr_ptr[i + 1]]:
            poly = _clip(poly, seeds[i], seeds[j])
            if len(poly) == 0:
                break
        counts[i] = len(poly)
        out[i, :len(poly)] = poly
    return counts, out

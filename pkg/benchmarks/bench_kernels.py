"""Time the numba kernels against the pure-numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is called once
to trigger compilation, then timed over several repeats; the best time is
reported. Outputs of both backends are compared before timing.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from vemschwarz._kernels import _numba, _numpy, round_robin_pairs
from vemschwarz.linalg import factor_spd
from vemschwarz.mesh import _delaunay_neighbours, build_triangular
from vemschwarz.vem import vem_space


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def raw_envelope(A, F):
    B = sp.tril(A[F.perm][:, F.perm], format="csr")
    vals = np.zeros(F.ptr[-1])
    rows = np.repeat(np.arange(F.n), np.diff(B.indptr))
    vals[F.ptr[rows] + B.indices - F.first[rows]] = B.data
    return vals


def filled(counts, out):
    # rows past each cell's vertex count are scratch
    return np.concatenate([out[i, :c] for i, c in enumerate(counts)])


def cases(n_mesh, n_jacobi, n_seeds):
    rng = np.random.default_rng(0)
    mesh = build_triangular(n_mesh)
    A = vem_space(mesh, 1).stiffness() + sp.identity(mesh.n_vertices)
    A = A.tocsr()
    x = rng.standard_normal(A.shape[0])
    F = factor_spd(A)
    raw = raw_envelope(A, F)
    b = rng.standard_normal((A.shape[0], 1))
    X = rng.standard_normal((n_jacobi, n_jacobi))
    C = X + X.T
    rounds = round_robin_pairs(n_jacobi)
    seeds = rng.random((n_seeds, 2))
    ptr, idx = _delaunay_neighbours(seeds)

    def factor(be):
        v = raw.copy()
        be.envelope_factor(F.first, F.ptr, v)
        return v

    return {
        f"csr_matvec (n={A.shape[0]})":
            lambda be: be.csr_matvec(A.indptr, A.indices, A.data, x),
        f"envelope_factor (n={A.shape[0]}, env={F.ptr[-1]})": factor,
        f"envelope_solve (n={A.shape[0]})":
            lambda be: be.envelope_solve(F.first, F.ptr, F.vals, b.copy()),
        f"jacobi_eigh (n={n_jacobi})":
            lambda be: be.jacobi_eigh(C.copy(), rounds, 1e-12, 100)[0],
        f"clip_voronoi_cells (seeds={n_seeds})":
            lambda be: filled(*be.clip_voronoi_cells(seeds, ptr, idx)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mesh-n", type=int, default=60)
    p.add_argument("--jacobi-n", type=int, default=80)
    p.add_argument("--seeds", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    print(f"{'kernel':46s} {'numpy [s]':>11s} {'numba [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(args.mesh_n, args.jacobi_n, args.seeds).items():
        a, b = np.asarray(fn(_numpy)), np.asarray(fn(_numba))
        if name.startswith("jacobi"):
            a, b = np.sort(a), np.sort(b)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10), name
        t_np = best_of(lambda: fn(_numpy), args.repeats)
        t_nb = best_of(lambda: fn(_numba), args.repeats)
        print(f"{name:46s} {t_np:11.4g} {t_nb:11.4g} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()

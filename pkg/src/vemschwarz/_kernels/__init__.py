"""Hot loops, compiled with numba when available.

Set ``VEMSCHWARZ_KERNELS=numpy`` to force the pure-numpy fallback. Both
backends are importable directly (``_numba`` / ``_numpy``) for comparison.
"""

import os
import warnings

import numpy as np

from . import _numpy

BACKEND = os.environ.get("VEMSCHWARZ_KERNELS", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"VEMSCHWARZ_KERNELS must be 'numba' or 'numpy', got {BACKEND!r}")

if BACKEND == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        warnings.warn("numba unavailable; using numpy kernels", RuntimeWarning)
        BACKEND = "numpy"
        _impl = _numpy
else:
    _impl = _numpy

csr_matvec = _impl.csr_matvec
envelope_factor = _impl.envelope_factor
envelope_solve = _impl.envelope_solve
jacobi_eigh = _impl.jacobi_eigh
clip_voronoi_cells = _impl.clip_voronoi_cells


def round_robin_pairs(n):
    """Circle-method pairing: each round is a set of disjoint index pairs.

    Pairs touching the padding index (odd ``n``) have ``q == n``.
    """
    m = n + (n % 2)
    if m < 2:
        return np.zeros((0, 1, 2), dtype=np.int64)
    order = list(range(m))
    rounds = np.empty((m - 1, m // 2, 2), dtype=np.int64)
    for r in range(m - 1):
        for k in range(m // 2):
            p, q = order[k], order[m - 1 - k]
            rounds[r, k] = (min(p, q), max(p, q))
        order = [order[0]] + [order[-1]] + order[1:-1]
    return rounds


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = BACKEND if name is None else name
    if name == "numpy":
        return _numpy
    from . import _numba
    return _numba

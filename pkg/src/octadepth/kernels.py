"""Kernel selection: the compiled extension when built, else pure Python.

Set ``OCTADEPTH_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
if not os.environ.get("OCTADEPTH_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

zhang_suen = _impl.zhang_suen
kdtree_query = _impl.kdtree_query


def _ring_bits(n: int):
    # E, NE, N, NW, W, SW, S, SE
    return [(n >> i) & 1 for i in range(8)]


def _guo_hall_tables():
    """Deletion tables for the two Guo-Hall subiterations."""
    a = np.zeros(256, dtype=np.uint8)
    b = np.zeros(256, dtype=np.uint8)
    for n in range(256):
        p = _ring_bits(n)
        # crossing number over the four edge neighbours
        xh = sum(1 for i in (0, 2, 4, 6) if not p[i] and (p[i + 1] or p[(i + 2) % 8]))
        n1 = sum(1 for k in (1, 3, 5, 7) if p[k] or p[k - 1])
        n2 = sum(1 for k in (1, 3, 5, 7) if p[k] or p[(k + 1) % 8])
        if xh != 1 or min(n1, n2) not in (2, 3):
            continue
        a[n] = not ((p[1] or p[2] or not p[7]) and p[0])
        b[n] = not ((p[5] or p[6] or not p[3]) and p[4])
    return a, b


GUO_HALL_TABLES = _guo_hall_tables()


def guo_hall(mask):
    """Guo-Hall parallel thinning; unlike Zhang-Suen it keeps 2-px diagonals."""
    return _impl.lut_thin(np.ascontiguousarray(mask, dtype=np.uint8), *GUO_HALL_TABLES)


__all__ = ["BACKEND", "zhang_suen", "guo_hall", "kdtree_query"]

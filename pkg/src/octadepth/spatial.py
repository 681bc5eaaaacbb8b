"""Exact nearest-neighbour search over 3D points.

:class:`KDTree` splits on the widest axis at the median and answers queries
with full backtracking, so results are exact. Equal distances resolve to the
smaller point index, which makes the tree agree with a linear scan.
"""

from __future__ import annotations

import numpy as np

from . import kernels

LEAF_SIZE = 16


class KDTree:
    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (n, 3) points, got {pts.shape}")
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        self.leaf_size = leaf_size
        self._build()

    def _build(self):
        pts = self.points
        index = np.arange(len(pts), dtype=np.int64)
        dims, vals, lefts, rights, starts, stops = [], [], [], [], [], []

        def new_node(lo, hi):
            dims.append(-1)
            vals.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            starts.append(lo)
            stops.append(hi)
            return len(dims) - 1

        root = new_node(0, len(pts))
        todo = [root]
        while todo:
            node = todo.pop()
            lo, hi = starts[node], stops[node]
            if hi - lo <= self.leaf_size:
                continue
            sub = pts[index[lo:hi]]
            spread = sub.max(axis=0) - sub.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                continue
            mid = (hi - lo) // 2
            order = np.argpartition(sub[:, dim], mid, kind="introselect")
            index[lo:hi] = index[lo:hi][order]
            dims[node] = dim
            vals[node] = float(pts[index[lo + mid], dim])
            lefts[node] = new_node(lo, lo + mid)
            rights[node] = new_node(lo + mid, hi)
            todo.extend((rights[node], lefts[node]))

        self._index = index
        self._split_dim = np.asarray(dims, dtype=np.int64)
        self._split_val = np.asarray(vals, dtype=np.float64)
        self._left = np.asarray(lefts, dtype=np.int64)
        self._right = np.asarray(rights, dtype=np.int64)
        self._start = np.asarray(starts, dtype=np.int64)
        self._stop = np.asarray(stops, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self._split_dim)

    def query(self, queries, impl=None) -> tuple[np.ndarray, np.ndarray]:
        """Return (distance, index) of the nearest indexed point per query.

        ``impl`` picks a kernel module (``_kernels`` or ``_pykernels``);
        the default is the one selected at import.
        """
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        d2, idx = (impl or kernels).kdtree_query(
            self.points, self._index, self._split_dim, self._split_val,
            self._left, self._right, self._start, self._stop, q,
        )
        return np.sqrt(d2), idx


def build_spatial_index(points) -> KDTree:
    return KDTree(points)


def nearest_brute(points, queries, block: int = 1 << 22) -> tuple[np.ndarray, np.ndarray]:
    """Linear-scan nearest neighbours. Queries are processed in chunks of
    about ``block`` pairwise distances to bound memory."""
    p = np.asarray(points, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    chunk = max(1, block // max(len(p), 1))
    dist = np.empty(len(q))
    idx = np.empty(len(q), dtype=np.int64)
    for s in range(0, len(q), chunk):
        qc = q[s : s + chunk]
        dx = p[None, :, 0] - qc[:, None, 0]
        dy = p[None, :, 1] - qc[:, None, 1]
        dz = p[None, :, 2] - qc[:, None, 2]
        d2 = dx * dx + dy * dy + dz * dz
        j = np.argmin(d2, axis=1)
        idx[s : s + chunk] = j
        dist[s : s + chunk] = np.sqrt(d2[np.arange(len(qc)), j])
    return dist, idx

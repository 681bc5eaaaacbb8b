"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import math

import numpy as np


def zhang_suen(mask):
    img = np.pad(np.asarray(mask, dtype=np.uint8) != 0, 1).astype(np.uint8)
    while True:
        changed = False
        for step in (0, 1):
            c = img[1:-1, 1:-1]
            p2 = img[:-2, 1:-1]
            p3 = img[:-2, 2:]
            p4 = img[1:-1, 2:]
            p5 = img[2:, 2:]
            p6 = img[2:, 1:-1]
            p7 = img[2:, :-2]
            p8 = img[1:-1, :-2]
            p9 = img[:-2, :-2]
            ring = [p2, p3, p4, p5, p6, p7, p8, p9]
            b = sum(p.astype(np.int32) for p in ring)
            a = sum(((ring[i] == 0) & (ring[(i + 1) % 8] == 1)).astype(np.int32)
                    for i in range(8))
            cond = (c == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if step == 0:
                cond &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            if cond.any():
                changed = True
                c[cond] = 0
        if not changed:
            return img[1:-1, 1:-1].copy()


_WEIGHTS = np.array([[8, 4, 2], [16, 0, 1], [32, 64, 128]], dtype=np.int32)


def lut_thin(mask, lut_a, lut_b):
    """Two-subiteration parallel thinning driven by 256-entry deletion tables."""
    img = np.pad(np.asarray(mask, dtype=np.uint8) != 0, 1).astype(np.int32)
    luts = (np.asarray(lut_a, dtype=bool), np.asarray(lut_b, dtype=bool))
    while True:
        changed = False
        h, w = img.shape[0] - 2, img.shape[1] - 2
        for lut in luts:
            code = sum(int(_WEIGHTS[dy, dx]) * img[dy:dy + h, dx:dx + w]
                       for dy in range(3) for dx in range(3) if (dy, dx) != (1, 1))
            c = img[1:-1, 1:-1]
            kill = (c == 1) & lut[code]
            if kill.any():
                changed = True
                c[kill] = 0
        if not changed:
            return img[1:-1, 1:-1].astype(np.uint8)


def kdtree_query(pts, index, split_dim, split_val, left, right, start, stop, queries):
    pts_l = np.asarray(pts).tolist()
    index = np.asarray(index).tolist()
    split_dim = np.asarray(split_dim).tolist()
    split_val = np.asarray(split_val).tolist()
    left = np.asarray(left).tolist()
    right = np.asarray(right).tolist()
    start = np.asarray(start).tolist()
    stop = np.asarray(stop).tolist()
    qs = np.asarray(queries).tolist()
    out_d2 = np.empty(len(qs), dtype=np.float64)
    out_i = np.empty(len(qs), dtype=np.int64)
    for q, (qx, qy, qz) in enumerate(qs):
        qv = (qx, qy, qz)
        best, best_i = math.inf, -1
        stack = [0]
        while stack:
            node = stack.pop()
            if node < 0:
                node = -node - 1
                diff = qv[split_dim[node]] - split_val[node]
                if diff * diff > best:
                    continue
                stack.append(right[node] if diff < 0 else left[node])
                continue
            if split_dim[node] < 0:
                for j in range(start[node], stop[node]):
                    pi = index[j]
                    px, py, pz = pts_l[pi]
                    dx = px - qx
                    dy = py - qy
                    dz = pz - qz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best or (d2 == best and pi < best_i):
                        best, best_i = d2, pi
                continue
            diff = qv[split_dim[node]] - split_val[node]
            stack.append(-node - 1)
            stack.append(left[node] if diff < 0 else right[node])
        out_d2[q] = best
        out_i[q] = best_i
    return out_d2, out_i

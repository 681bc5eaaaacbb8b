# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: thinning and exact KD-tree queries.

Both functions mirror ``_pykernels`` bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def zhang_suen(const unsigned char[:, ::1] mask):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t y, x, k, n_del
    cdef unsigned char[:, ::1] img = np.zeros((h + 2, w + 2), dtype=np.uint8)
    cdef unsigned char[:, ::1] flag = np.zeros((h + 2, w + 2), dtype=np.uint8)
    cdef unsigned char p2, p3, p4, p5, p6, p7, p8, p9
    cdef int b, a, step
    cdef bint changed = True

    for y in range(h):
        for x in range(w):
            img[y + 1, x + 1] = 1 if mask[y, x] else 0

    while changed:
        changed = False
        for step in range(2):
            n_del = 0
            for y in range(1, h + 1):
                for x in range(1, w + 1):
                    flag[y, x] = 0
                    if not img[y, x]:
                        continue
                    p2 = img[y - 1, x]
                    p3 = img[y - 1, x + 1]
                    p4 = img[y, x + 1]
                    p5 = img[y + 1, x + 1]
                    p6 = img[y + 1, x]
                    p7 = img[y + 1, x - 1]
                    p8 = img[y, x - 1]
                    p9 = img[y - 1, x - 1]
                    b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
                    if b < 2 or b > 6:
                        continue
                    a = ((p2 == 0 and p3 == 1) + (p3 == 0 and p4 == 1)
                         + (p4 == 0 and p5 == 1) + (p5 == 0 and p6 == 1)
                         + (p6 == 0 and p7 == 1) + (p7 == 0 and p8 == 1)
                         + (p8 == 0 and p9 == 1) + (p9 == 0 and p2 == 1))
                    if a != 1:
                        continue
                    if step == 0:
                        if p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0:
                            flag[y, x] = 1
                            n_del += 1
                    else:
                        if p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0:
                            flag[y, x] = 1
                            n_del += 1
            if n_del:
                changed = True
                for y in range(1, h + 1):
                    for x in range(1, w + 1):
                        if flag[y, x]:
                            img[y, x] = 0
    out = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    for y in range(h):
        for x in range(w):
            o[y, x] = img[y + 1, x + 1]
    return out


def lut_thin(const unsigned char[:, ::1] mask,
             const unsigned char[::1] lut_a,
             const unsigned char[::1] lut_b):
    """Two-subiteration parallel thinning driven by 256-entry deletion tables.

    Neighbour code bits: E=1, NE=2, N=4, NW=8, W=16, SW=32, S=64, SE=128.
    """
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t y, x, n_del
    cdef unsigned char[:, ::1] img = np.zeros((h + 2, w + 2), dtype=np.uint8)
    cdef unsigned char[:, ::1] flag = np.zeros((h + 2, w + 2), dtype=np.uint8)
    cdef const unsigned char[::1] lut
    cdef int code, step
    cdef bint changed = True

    for y in range(h):
        for x in range(w):
            img[y + 1, x + 1] = 1 if mask[y, x] else 0

    while changed:
        changed = False
        for step in range(2):
            lut = lut_a if step == 0 else lut_b
            n_del = 0
            for y in range(1, h + 1):
                for x in range(1, w + 1):
                    flag[y, x] = 0
                    if not img[y, x]:
                        continue
                    code = (img[y, x + 1] | (img[y - 1, x + 1] << 1) | (img[y - 1, x] << 2)
                            | (img[y - 1, x - 1] << 3) | (img[y, x - 1] << 4)
                            | (img[y + 1, x - 1] << 5) | (img[y + 1, x] << 6)
                            | (img[y + 1, x + 1] << 7))
                    if lut[code]:
                        flag[y, x] = 1
                        n_del += 1
            if n_del:
                changed = True
                for y in range(1, h + 1):
                    for x in range(1, w + 1):
                        if flag[y, x]:
                            img[y, x] = 0
    out = np.empty((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    for y in range(h):
        for x in range(w):
            o[y, x] = img[y + 1, x + 1]
    return out


def kdtree_query(const double[:, ::1] pts,
                 const long long[::1] index,
                 const long long[::1] split_dim,
                 const double[::1] split_val,
                 const long long[::1] left,
                 const long long[::1] right,
                 const long long[::1] start,
                 const long long[::1] stop,
                 const double[:, ::1] queries):
    """Nearest neighbour of every query; ties go to the smaller point index."""
    cdef Py_ssize_t nq = queries.shape[0]
    out_d2 = np.empty(nq, dtype=np.float64)
    out_i = np.empty(nq, dtype=np.int64)
    cdef double[::1] od = out_d2
    cdef long long[::1] oi = out_i
    cdef long long stack[256]
    cdef int sp
    cdef Py_ssize_t q, j
    cdef long long node, near, far, pi, best_i
    cdef double qx, qy, qz, dx, dy, dz, d2, best, diff

    with nogil:
        for q in range(nq):
            qx = queries[q, 0]
            qy = queries[q, 1]
            qz = queries[q, 2]
            best = INFINITY
            best_i = -1
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if node < 0:
                    # deferred far child: negative id carries -(node + 1)
                    node = -node - 1
                    diff = queries[q, split_dim[node]] - split_val[node]
                    if diff * diff > best:
                        continue
                    node = right[node] if diff < 0 else left[node]
                    stack[sp] = node
                    sp += 1
                    continue
                if split_dim[node] < 0:
                    for j in range(start[node], stop[node]):
                        pi = index[j]
                        dx = pts[pi, 0] - qx
                        dy = pts[pi, 1] - qy
                        dz = pts[pi, 2] - qz
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < best or (d2 == best and pi < best_i):
                            best = d2
                            best_i = pi
                    continue
                diff = queries[q, split_dim[node]] - split_val[node]
                if diff < 0:
                    near = left[node]
                else:
                    near = right[node]
                stack[sp] = -node - 1
                sp += 1
                stack[sp] = near
                sp += 1
            od[q] = best
            oi[q] = best_i
    return out_d2, out_i

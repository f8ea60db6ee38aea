# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled k-NN kernels.

Spatial search buckets points into a uniform grid and expands cell rings
around each query until no unvisited ring can beat the current k*d-th
best; this keeps the search exact while skipping most of the cloud.
Feature search is a plain O(N^2 F) scan. Both maintain a bounded
selection buffer ordered by (squared distance, index), so ties break to
the lowest index exactly like the numpy fallback and the test oracle.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cbrt
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline bint _worse(double d1, int i1, double d2, int i2) nogil:
    # is (d1, i1) lexicographically greater than (d2, i2)?
    if d1 != d2:
        return d1 > d2
    return i1 > i2


cdef inline int _buf_insert(double* dbuf, int* ibuf, int count, int cap,
                            double d, int idx, int* worst) nogil:
    """Insert candidate (d, idx) into the bounded selection buffer.

    Returns the new count; *worst tracks the position of the buffer's
    lexicographic maximum once the buffer is full.
    """
    cdef int j
    if count < cap:
        dbuf[count] = d
        ibuf[count] = idx
        count += 1
        if count == cap:
            worst[0] = 0
            for j in range(1, cap):
                if _worse(dbuf[j], ibuf[j], dbuf[worst[0]], ibuf[worst[0]]):
                    worst[0] = j
        return count
    if _worse(dbuf[worst[0]], ibuf[worst[0]], d, idx):
        dbuf[worst[0]] = d
        ibuf[worst[0]] = idx
        worst[0] = 0
        for j in range(1, cap):
            if _worse(dbuf[j], ibuf[j], dbuf[worst[0]], ibuf[worst[0]]):
                worst[0] = j
    return count


cdef inline void _buf_sort(double* dbuf, int* ibuf, int count) nogil:
    # insertion sort by (distance, index); buffers are small (k*d entries)
    cdef int i, j
    cdef double d
    cdef int v
    for i in range(1, count):
        d = dbuf[i]
        v = ibuf[i]
        j = i - 1
        while j >= 0 and _worse(dbuf[j], ibuf[j], d, v):
            dbuf[j + 1] = dbuf[j]
            ibuf[j + 1] = ibuf[j]
            j -= 1
        dbuf[j + 1] = d
        ibuf[j + 1] = v


def knn_spatial(cnp.ndarray[cnp.float64_t, ndim=2] positions not None,
                int k, int dilation, int n_queries):
    cdef int n = positions.shape[0]
    cdef int kd = k * dilation
    cdef cnp.ndarray[cnp.int32_t, ndim=2] out = np.empty((n_queries, k), dtype=np.int32)

    cdef double[:, ::1] pts = positions
    cdef int[:, ::1] res = out

    # grid geometry: aim for ~2 points per cell, capped at 128 cells per axis
    cdef double minx = pts[0, 0], miny = pts[0, 1], minz = pts[0, 2]
    cdef double maxx = minx, maxy = miny, maxz = minz
    cdef int i, j
    for i in range(1, n):
        if pts[i, 0] < minx: minx = pts[i, 0]
        if pts[i, 0] > maxx: maxx = pts[i, 0]
        if pts[i, 1] < miny: miny = pts[i, 1]
        if pts[i, 1] > maxy: maxy = pts[i, 1]
        if pts[i, 2] < minz: minz = pts[i, 2]
        if pts[i, 2] > maxz: maxz = pts[i, 2]
    cdef double ex = maxx - minx, ey = maxy - miny, ez = maxz - minz
    cdef double longest = ex
    if ey > longest: longest = ey
    if ez > longest: longest = ez
    cdef double s
    if longest <= 0.0:
        s = 1.0  # all points coincide; one cell holds everything
    else:
        s = longest / cbrt(<double> n / 2.0 + 1.0)
        if s <= 0.0:
            s = longest
    cdef int gx = <int> (ex / s) + 1
    cdef int gy = <int> (ey / s) + 1
    cdef int gz = <int> (ez / s) + 1
    if gx > 128: gx = 128
    if gy > 128: gy = 128
    if gz > 128: gz = 128
    cdef double sx = ex / gx if ex > 0 else 1.0
    cdef double sy = ey / gy if ey > 0 else 1.0
    cdef double sz = ez / gz if ez > 0 else 1.0
    # the ring lower bound needs one cell size valid on every axis
    cdef double smin = sx
    if sy < smin: smin = sy
    if sz < smin: smin = sz

    cdef int ncells = gx * gy * gz
    cdef int* cell_of = <int*> malloc(n * sizeof(int))
    cdef int* counts = <int*> malloc((ncells + 1) * sizeof(int))
    cdef int* order = <int*> malloc(n * sizeof(int))
    cdef int* cursor = <int*> malloc(ncells * sizeof(int))
    cdef double* dbuf = <double*> malloc(kd * sizeof(double))
    cdef int* ibuf = <int*> malloc(kd * sizeof(int))
    if not (cell_of and counts and order and cursor and dbuf and ibuf):
        free(cell_of); free(counts); free(order); free(cursor); free(dbuf); free(ibuf)
        raise MemoryError()

    cdef int cx, cy, cz, cid
    cdef int r, lox, hix, loy, hiy, loz, hiz, ax, ay, az
    cdef int count, worst, qi, pj, start, stop, t
    cdef double dx, dy, dz, dsq, bound
    cdef int rmax = gx + gy + gz + 2

    with nogil:
        for j in range(ncells + 1):
            counts[j] = 0
        for i in range(n):
            cx = <int> ((pts[i, 0] - minx) / sx)
            cy = <int> ((pts[i, 1] - miny) / sy)
            cz = <int> ((pts[i, 2] - minz) / sz)
            if cx >= gx: cx = gx - 1
            if cy >= gy: cy = gy - 1
            if cz >= gz: cz = gz - 1
            cid = (cx * gy + cy) * gz + cz
            cell_of[i] = cid
            counts[cid + 1] += 1
        for j in range(ncells):
            counts[j + 1] += counts[j]
        for j in range(ncells):
            cursor[j] = counts[j]
        for i in range(n):
            order[cursor[cell_of[i]]] = i
            cursor[cell_of[i]] += 1

        for qi in range(n_queries):
            cx = <int> ((pts[qi, 0] - minx) / sx)
            cy = <int> ((pts[qi, 1] - miny) / sy)
            cz = <int> ((pts[qi, 2] - minz) / sz)
            if cx >= gx: cx = gx - 1
            if cy >= gy: cy = gy - 1
            if cz >= gz: cz = gz - 1
            count = 0
            worst = -1
            for r in range(rmax + 1):
                if count == kd:
                    # rings beyond r-1 are at least (r-1)*smin away
                    bound = (r - 1) * smin
                    if bound > 0 and bound * bound > dbuf[worst]:
                        break
                lox = cx - r
                hix = cx + r
                loy = cy - r
                hiy = cy + r
                loz = cz - r
                hiz = cz + r
                if lox < 0 and hix >= gx and loy < 0 and hiy >= gy and loz < 0 and hiz >= gz:
                    if r > 0:
                        break  # every cell already visited
                for ax in range(lox, hix + 1):
                    if ax < 0 or ax >= gx:
                        continue
                    for ay in range(loy, hiy + 1):
                        if ay < 0 or ay >= gy:
                            continue
                        for az in range(loz, hiz + 1):
                            if az < 0 or az >= gz:
                                continue
                            # only the shell at Chebyshev radius r is new
                            if r > 0 and ax != lox and ax != hix and ay != loy and ay != hiy and az != loz and az != hiz:
                                continue
                            cid = (ax * gy + ay) * gz + az
                            start = counts[cid]
                            stop = counts[cid + 1]
                            for t in range(start, stop):
                                pj = order[t]
                                if pj == qi:
                                    continue
                                dx = pts[pj, 0] - pts[qi, 0]
                                dy = pts[pj, 1] - pts[qi, 1]
                                dz = pts[pj, 2] - pts[qi, 2]
                                dsq = dx * dx + dy * dy + dz * dz
                                count = _buf_insert(dbuf, ibuf, count, kd, dsq, pj, &worst)
            _buf_sort(dbuf, ibuf, count)
            for t in range(k):
                res[qi, t] = ibuf[dilation * (t + 1) - 1]

    free(cell_of); free(counts); free(order); free(cursor); free(dbuf); free(ibuf)
    return out


def knn_feature(cnp.ndarray[cnp.float64_t, ndim=2] features not None,
                int k, int n_queries):
    cdef int n = features.shape[0]
    cdef int f = features.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=2] out = np.empty((n_queries, k), dtype=np.int32)
    cdef double[:, ::1] x = features
    cdef int[:, ::1] res = out

    cdef double* dbuf = <double*> malloc(k * sizeof(double))
    cdef int* ibuf = <int*> malloc(k * sizeof(int))
    if not (dbuf and ibuf):
        free(dbuf); free(ibuf)
        raise MemoryError()

    cdef int qi, pj, d, t, count, worst
    cdef double dsq, diff

    with nogil:
        for qi in range(n_queries):
            count = 0
            worst = -1
            for pj in range(n):
                if pj == qi:
                    continue
                dsq = 0.0
                for d in range(f):
                    diff = x[pj, d] - x[qi, d]
                    dsq += diff * diff
                count = _buf_insert(dbuf, ibuf, count, k, dsq, pj, &worst)
            _buf_sort(dbuf, ibuf, count)
            for t in range(k):
                res[qi, t] = ibuf[t]

    free(dbuf); free(ibuf)
    return out

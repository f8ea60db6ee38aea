"""Pure-numpy k-NN backend.

Same contract as the compiled kernels: exact (distance, index) ordering
with self excluded. Works in blocks of query rows to bound memory; within
a block the k*d smallest are found by argpartition and ties at the cutoff
are resolved per row so the lowest-index rule holds exactly.
"""

import numpy as np

_BLOCK = 128


def _block_dsq(points, lo, hi):
    # accumulate per coordinate: (B, N) without a (B, N, F) temporary
    n, f = points.shape
    dsq = np.zeros((hi - lo, n))
    for d in range(f):
        diff = points[lo:hi, d, None] - points[None, :, d]
        dsq += diff * diff
    rows = np.arange(lo, hi)
    dsq[rows - lo, rows] = np.inf
    return dsq


def _select(points, k, dilation, n_queries):
    kd = k * dilation
    take = dilation * np.arange(1, k + 1) - 1
    out = np.empty((n_queries, k), dtype=np.int32)
    for lo in range(0, n_queries, _BLOCK):
        hi = min(lo + _BLOCK, n_queries)
        dsq = _block_dsq(points, lo, hi)
        part = np.argpartition(dsq, kd - 1, axis=1)[:, :kd]
        cut = dsq[np.arange(hi - lo)[:, None], part].max(axis=1)
        for r in range(hi - lo):
            cand = np.flatnonzero(dsq[r] <= cut[r])
            if len(cand) > kd:  # ties straddling the cutoff
                cand = cand[np.lexsort((cand, dsq[r, cand]))][:kd]
            else:
                cand = cand[np.argsort(dsq[r, cand], kind="stable")]
            out[lo + r] = cand[take]
    return out


def knn_spatial(positions, k, dilation, n_queries):
    return _select(positions, k, dilation, n_queries)


def knn_feature(features, k, n_queries):
    return _select(features, k, 1, n_queries)

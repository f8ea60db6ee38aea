# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled elementwise/gather kernels for the network hot path.

Each function has a numpy twin in fastops.py; the dispatcher picks this
module when it is built. Shapes are flat 2-D row blocks throughout.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double

# pair layout codes, kept in sync with fastops.VARIANT_CODES
DEF V_EDGE = 0
DEF V_LOCAL_EDGE = 1
DEF V_VERTEX = 2
DEF V_EDGE_VERTEX = 3


def gather_pairs(floating[:, ::1] x, floating[:, ::1] pos, int[:, ::1] idx,
                 int variant, floating[:, ::1] out, Py_ssize_t row0):
    """Fill out[row0 : row0 + m*k] with the variant's pair rows."""
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t f = x.shape[1]
    cdef Py_ssize_t i, t, c, j, r
    with nogil:
        for i in range(m):
            for t in range(k):
                r = row0 + i * k + t
                j = idx[i, t]
                if variant == V_LOCAL_EDGE:
                    for c in range(f):
                        out[r, c] = x[j, c] - x[i, c]
                elif variant == V_EDGE:
                    for c in range(f):
                        out[r, c] = x[i, c]
                        out[r, f + c] = x[j, c] - x[i, c]
                elif variant == V_VERTEX:
                    for c in range(f):
                        out[r, c] = x[i, c]
                        out[r, f + c] = x[j, c]
                else:
                    for c in range(3):
                        out[r, c] = pos[i, c]
                        out[r, 3 + c] = pos[j, c] - pos[i, c]
                    for c in range(f):
                        out[r, 6 + c] = x[i, c]
                        out[r, 6 + f + c] = x[j, c]


def scatter_pairs(floating[:, ::1] g, int[:, ::1] idx, int variant,
                  floating[:, ::1] gx, Py_ssize_t row0):
    """Accumulate pair-row gradients back onto the point features."""
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t f = gx.shape[1]
    cdef Py_ssize_t i, t, c, j, r
    with nogil:
        for i in range(m):
            for t in range(k):
                r = row0 + i * k + t
                j = idx[i, t]
                if variant == V_LOCAL_EDGE:
                    for c in range(f):
                        gx[i, c] -= g[r, c]
                        gx[j, c] += g[r, c]
                elif variant == V_EDGE:
                    for c in range(f):
                        gx[i, c] += g[r, c] - g[r, f + c]
                        gx[j, c] += g[r, f + c]
                elif variant == V_VERTEX:
                    for c in range(f):
                        gx[i, c] += g[r, c]
                        gx[j, c] += g[r, f + c]
                else:
                    for c in range(f):
                        gx[i, c] += g[r, 6 + c]
                        gx[j, c] += g[r, 6 + f + c]


def group_max(floating[:, ::1] h, Py_ssize_t k):
    """Per-feature max over consecutive groups of k rows.

    Returns (out, arg): (G, F) maxima and the within-group argmax (first
    occurrence wins on ties, matching numpy argmax).
    """
    cdef Py_ssize_t rows = h.shape[0]
    cdef Py_ssize_t f = h.shape[1]
    cdef Py_ssize_t groups = rows // k
    out_np = np.empty((groups, f), dtype=np.asarray(h).dtype)
    arg_np = np.empty((groups, f), dtype=np.int32)
    cdef floating[:, ::1] out = out_np
    cdef int[:, ::1] arg = arg_np
    cdef Py_ssize_t gi, t, c, base
    cdef floating v
    with nogil:
        for gi in range(groups):
            base = gi * k
            for c in range(f):
                out[gi, c] = h[base, c]
                arg[gi, c] = 0
            for t in range(1, k):
                for c in range(f):
                    v = h[base + t, c]
                    if v > out[gi, c]:
                        out[gi, c] = v
                        arg[gi, c] = <int> t
    return out_np, arg_np


def group_max_backward(floating[:, ::1] g, int[:, ::1] arg, Py_ssize_t k):
    """Route group-max gradients to the winning rows."""
    cdef Py_ssize_t groups = g.shape[0]
    cdef Py_ssize_t f = g.shape[1]
    gh_np = np.zeros((groups * k, f), dtype=np.asarray(g).dtype)
    cdef floating[:, ::1] gh = gh_np
    cdef Py_ssize_t gi, c
    with nogil:
        for gi in range(groups):
            for c in range(f):
                gh[gi * k + arg[gi, c], c] = g[gi, c]
    return gh_np


def leaky_forward(floating[:, ::1] a, double slope):
    """Leaky ReLU; returns (out, negative-entry mask for the backward).

    Branchless so the ~50/50 sign split does not stall the pipeline."""
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t f = a.shape[1]
    out_np = np.empty((rows, f), dtype=np.asarray(a).dtype)
    mask_np = np.empty((rows, f), dtype=np.uint8)
    cdef floating[:, ::1] out = out_np
    cdef unsigned char[:, ::1] mask = mask_np
    cdef Py_ssize_t r, c
    cdef floating s = <floating> slope
    cdef floating v
    with nogil:
        for r in range(rows):
            for c in range(f):
                v = a[r, c]
                mask[r, c] = v < 0
                # max/min split vectorizes and adding the exact zero arm
                # keeps values identical to a mask-based where()
                out[r, c] = (v if v > 0 else 0) + s * (v if v < 0 else 0)
    return out_np, mask_np


def leaky_backward(floating[:, ::1] g, unsigned char[:, ::1] mask, double slope):
    cdef Py_ssize_t rows = g.shape[0]
    cdef Py_ssize_t f = g.shape[1]
    gg_np = np.empty((rows, f), dtype=np.asarray(g).dtype)
    cdef floating[:, ::1] gg = gg_np
    cdef Py_ssize_t r, c
    cdef floating s = <floating> slope
    cdef floating gv, nf
    with nogil:
        for r in range(rows):
            for c in range(f):
                gv = g[r, c]
                nf = <floating> mask[r, c]
                gg[r, c] = nf * (gv * s) + (1 - nf) * gv
    return gg_np


def norm_forward(floating[:, ::1] a, floating[::1] mean, floating[::1] istd,
                 floating[::1] gamma, floating[::1] beta):
    """Fused (a - mean) * istd -> xhat and gamma * xhat + beta -> out."""
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t f = a.shape[1]
    dtype = np.asarray(a).dtype
    out_np = np.empty((rows, f), dtype=dtype)
    xhat_np = np.empty((rows, f), dtype=dtype)
    cdef floating[:, ::1] out = out_np
    cdef floating[:, ::1] xhat = xhat_np
    cdef Py_ssize_t r, c
    cdef floating v
    with nogil:
        for r in range(rows):
            for c in range(f):
                v = (a[r, c] - mean[c]) * istd[c]
                xhat[r, c] = v
                out[r, c] = gamma[c] * v + beta[c]
    return out_np, xhat_np


def norm_backward(floating[:, ::1] g, floating[:, ::1] xhat,
                  floating[::1] gamma, floating[::1] istd):
    """Batch-statistics normalization backward.

    Returns (ga, dgamma, dbeta). Uses the identity that the row sums the
    input gradient needs are gamma * dbeta and gamma * dgamma.
    """
    cdef Py_ssize_t rows = g.shape[0]
    cdef Py_ssize_t f = g.shape[1]
    dtype = np.asarray(g).dtype
    ga_np = np.empty((rows, f), dtype=dtype)
    dgamma_np = np.zeros(f, dtype=np.float64)
    dbeta_np = np.zeros(f, dtype=np.float64)
    cdef floating[:, ::1] ga = ga_np
    cdef double[::1] dgamma = dgamma_np
    cdef double[::1] dbeta = dbeta_np
    cdef Py_ssize_t r, c
    cdef double gv
    with nogil:
        for r in range(rows):
            for c in range(f):
                gv = g[r, c]
                dbeta[c] += gv
                dgamma[c] += gv * xhat[r, c]
    # second pass: ga = istd * gamma * (g - dbeta/rows - xhat * dgamma/rows)
    mg_np = dbeta_np / rows
    mgx_np = dgamma_np / rows
    cdef double[::1] mg = mg_np
    cdef double[::1] mgx = mgx_np
    with nogil:
        for r in range(rows):
            for c in range(f):
                ga[r, c] = <floating> (istd[c] * gamma[c]
                                       * (g[r, c] - mg[c] - xhat[r, c] * mgx[c]))
    return ga_np, dgamma_np.astype(dtype), dbeta_np.astype(dtype)


def expand_pairs(floating[:, ::1] s, floating[:, ::1] t, int[:, ::1] idx,
                 floating[:, ::1] out, Py_ssize_t row0):
    """out[row0 + i*k + u] = s[i] + t[idx[i, u]] (the factored pair affine)."""
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t f = s.shape[1]
    cdef Py_ssize_t i, u, c, j, r
    with nogil:
        for i in range(m):
            for u in range(k):
                r = row0 + i * k + u
                j = idx[i, u]
                for c in range(f):
                    out[r, c] = s[i, c] + t[j, c]


def reduce_pairs(floating[:, ::1] g, int[:, ::1] idx, Py_ssize_t row0,
                 floating[:, ::1] ds, floating[:, ::1] dt):
    """Backward of expand_pairs: ds[i] = sum_u g[r]; dt[j] += g[r]."""
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t f = ds.shape[1]
    cdef Py_ssize_t i, u, c, j, r
    with nogil:
        for i in range(m):
            for u in range(k):
                r = row0 + i * k + u
                j = idx[i, u]
                for c in range(f):
                    ds[i, c] += g[r, c]
                    dt[j, c] += g[r, c]


def norm_leaky_forward(floating[:, ::1] h, floating[::1] mean, floating[::1] istd,
                       floating[::1] gamma, floating[::1] beta, double slope):
    """Fused normalize + leaky ReLU; one read of h, one write of out.

    The backward recomputes xhat from h, so only the sign mask is kept.
    """
    cdef Py_ssize_t rows = h.shape[0]
    cdef Py_ssize_t f = h.shape[1]
    out_np = np.empty((rows, f), dtype=np.asarray(h).dtype)
    mask_np = np.empty((rows, f), dtype=np.uint8)
    cdef floating[:, ::1] out = out_np
    cdef unsigned char[:, ::1] mask = mask_np
    cdef Py_ssize_t r, c
    cdef floating z
    cdef floating s = <floating> slope
    with nogil:
        for r in range(rows):
            for c in range(f):
                z = gamma[c] * ((h[r, c] - mean[c]) * istd[c]) + beta[c]
                mask[r, c] = z < 0
                out[r, c] = (z if z > 0 else 0) + s * (z if z < 0 else 0)
    return out_np, mask_np


def norm_leaky_backward(floating[:, ::1] g, floating[:, ::1] h,
                        unsigned char[:, ::1] mask, floating[::1] mean,
                        floating[::1] istd, floating[::1] gamma, double slope):
    """Backward of the fused block. Returns (gh, dgamma, dbeta)."""
    cdef Py_ssize_t rows = g.shape[0]
    cdef Py_ssize_t f = g.shape[1]
    dtype = np.asarray(g).dtype
    gh_np = np.empty((rows, f), dtype=dtype)
    dgamma_np = np.zeros(f, dtype=np.float64)
    dbeta_np = np.zeros(f, dtype=np.float64)
    cdef floating[:, ::1] gh = gh_np
    cdef double[::1] dgamma = dgamma_np
    cdef double[::1] dbeta = dbeta_np
    cdef Py_ssize_t r, c
    cdef double gz, xh, nf
    cdef double s = slope
    with nogil:
        for r in range(rows):
            for c in range(f):
                nf = <double> mask[r, c]
                gz = nf * (g[r, c] * s) + (1 - nf) * g[r, c]
                xh = (h[r, c] - mean[c]) * istd[c]
                dbeta[c] += gz
                dgamma[c] += gz * xh
    mg_np = dbeta_np / rows
    mgx_np = dgamma_np / rows
    cdef double[::1] mg = mg_np
    cdef double[::1] mgx = mgx_np
    with nogil:
        for r in range(rows):
            for c in range(f):
                nf = <double> mask[r, c]
                gz = nf * (g[r, c] * s) + (1 - nf) * g[r, c]
                xh = (h[r, c] - mean[c]) * istd[c]
                gh[r, c] = <floating> (istd[c] * gamma[c] * (gz - mg[c] - xh * mgx[c]))
    return gh_np, dgamma_np.astype(dtype), dbeta_np.astype(dtype)


def col_mean_var(floating[:, ::1] a):
    """Per-column mean and population variance in one pass."""
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t f = a.shape[1]
    mean_np = np.zeros(f, dtype=np.float64)
    var_np = np.zeros(f, dtype=np.float64)
    cdef double[::1] mean = mean_np
    cdef double[::1] var = var_np
    cdef Py_ssize_t r, c
    cdef double v
    with nogil:
        for r in range(rows):
            for c in range(f):
                mean[c] += a[r, c]
        for c in range(f):
            mean[c] /= rows
        for r in range(rows):
            for c in range(f):
                v = a[r, c] - mean[c]
                var[c] += v * v
        for c in range(f):
            var[c] /= rows
    dtype = np.asarray(a).dtype
    return mean_np.astype(dtype), var_np.astype(dtype)

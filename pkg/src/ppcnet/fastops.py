"""Dispatch between the compiled elementwise kernels and numpy twins.

The compiled module shaves the interpreter and temporary-array overhead
off the training hot path; the numpy versions compute the same values.
PPC_FASTOPS=numpy forces the fallback (useful for benchmarking).
"""

import os

import numpy as np

try:
    from . import _fastops as _compiled
except ImportError:
    _compiled = None

if os.environ.get("PPC_FASTOPS") == "numpy":
    _compiled = None

VARIANT_CODES = {"edge": 0, "local_edge": 1, "vertex": 2, "edge_vertex": 3}


def compiled_active() -> bool:
    return _compiled is not None


def gather_pairs(x, pos, idx, variant, out, row0):
    """Write the (m*k, P) pair rows for one cloud into out[row0:...]."""
    if _compiled is not None:
        pos_arg = pos if pos is not None else x[:, :0]  # unused for non-spatial variants
        _compiled.gather_pairs(x, np.ascontiguousarray(pos_arg), idx, VARIANT_CODES[variant],
                               out, row0)
        return
    m, k = idx.shape
    f = x.shape[1]
    xi = np.broadcast_to(x[:m, None, :], (m, k, f))
    xj = x[idx]
    block = out[row0:row0 + m * k].reshape(m, k, -1)
    if variant == "local_edge":
        np.subtract(xj, xi, out=block)
    elif variant == "edge":
        block[:, :, :f] = xi
        np.subtract(xj, xi, out=block[:, :, f:])
    elif variant == "vertex":
        block[:, :, :f] = xi
        block[:, :, f:] = xj
    else:
        pi = np.broadcast_to(pos[:m, None, :], (m, k, 3))
        block[:, :, :3] = pi
        np.subtract(pos[idx], pi, out=block[:, :, 3:6])
        block[:, :, 6:6 + f] = xi
        block[:, :, 6 + f:] = xj


def scatter_pairs(g, idx, variant, gx, row0):
    """Accumulate pair-row gradients onto gx (the per-point features)."""
    if _compiled is not None:
        _compiled.scatter_pairs(g, idx, VARIANT_CODES[variant], gx, row0)
        return
    m, k = idx.shape
    f = gx.shape[1]
    block = g[row0:row0 + m * k].reshape(m, k, -1)
    if variant == "local_edge":
        gi = -block.sum(axis=1)
        gj = block
    elif variant == "edge":
        gi = (block[:, :, :f] - block[:, :, f:]).sum(axis=1)
        gj = block[:, :, f:]
    elif variant == "vertex":
        gi = block[:, :, :f].sum(axis=1)
        gj = block[:, :, f:]
    else:
        gi = block[:, :, 6:6 + f].sum(axis=1)
        gj = block[:, :, 6 + f:]
    gx[:m] += gi
    np.add.at(gx, idx.reshape(-1), gj.reshape(m * k, f))


def group_max(h, k):
    """Max and argmax over consecutive k-row groups: (G*k, F) -> (G, F)."""
    if _compiled is not None:
        return _compiled.group_max(h, k)
    groups = h.shape[0] // k
    grouped = h.reshape(groups, k, -1)
    arg = grouped.argmax(axis=1).astype(np.int32)
    out = np.take_along_axis(grouped, arg[:, None, :].astype(np.int64), axis=1)[:, 0, :]
    return out, arg


def group_max_backward(g, arg, k):
    if _compiled is not None:
        return _compiled.group_max_backward(g, arg, k)
    groups, f = g.shape
    gh = np.zeros((groups, k, f), dtype=g.dtype)
    np.put_along_axis(gh, arg[:, None, :].astype(np.int64), g[:, None, :], axis=1)
    return gh.reshape(groups * k, f)


def leaky_forward(a, slope):
    if _compiled is not None:
        return _compiled.leaky_forward(a, slope)
    mask = (a < 0).astype(np.uint8)
    out = np.where(mask, a * a.dtype.type(slope), a)
    return out, mask


def leaky_backward(g, mask, slope):
    if _compiled is not None:
        return _compiled.leaky_backward(g, mask, slope)
    return np.where(mask, g * g.dtype.type(slope), g)


def col_mean_var(a):
    if _compiled is not None and a.flags.c_contiguous:
        return _compiled.col_mean_var(a)
    return a.mean(axis=0), a.var(axis=0)


def expand_pairs(s, t, idx, out, row0):
    """out[row0 + i*k + u] = s[i] + t[idx[i, u]]."""
    if _compiled is not None:
        _compiled.expand_pairs(s, t, idx, out, row0)
        return
    m, k = idx.shape
    block = out[row0:row0 + m * k].reshape(m, k, -1)
    np.add(s[:, None, :], t[idx], out=block)


def reduce_pairs(g, idx, row0, ds, dt):
    """ds[i] += sum_u g[row]; dt[j] += g[row] over the cloud's pair rows."""
    if _compiled is not None:
        _compiled.reduce_pairs(g, idx, row0, ds, dt)
        return
    m, k = idx.shape
    block = g[row0:row0 + m * k].reshape(m, k, -1)
    ds += block.sum(axis=1)
    np.add.at(dt, idx.reshape(-1), block.reshape(m * k, -1))


def norm_leaky_forward(h, mean, istd, gamma, beta, slope):
    """Fused normalize + leaky ReLU: returns (out, negative-entry mask)."""
    if _compiled is not None and h.flags.c_contiguous:
        return _compiled.norm_leaky_forward(h, mean, istd, gamma, beta, slope)
    z = gamma * ((h - mean) * istd) + beta
    mask = (z < 0).astype(np.uint8)
    out = np.where(mask, z * z.dtype.type(slope), z)
    return out, mask


def norm_leaky_backward(g, h, mask, mean, istd, gamma, slope):
    """Backward of the fused block: returns (gh, dgamma, dbeta)."""
    if _compiled is not None and g.flags.c_contiguous and h.flags.c_contiguous:
        return _compiled.norm_leaky_backward(g, h, mask, mean, istd, gamma, slope)
    r = g.shape[0]
    gz = np.where(mask, g * g.dtype.type(slope), g)
    xhat = (h - mean) * istd
    dbeta = gz.sum(axis=0, dtype=np.float64)
    dgamma = np.einsum("rf,rf->f", gz, xhat, dtype=np.float64)
    gh = (istd * gamma) * (gz - dbeta / r - xhat * (dgamma / r))
    return (gh.astype(g.dtype, copy=False),
            dgamma.astype(g.dtype), dbeta.astype(g.dtype))


def norm_forward(a, mean, istd, gamma, beta):
    """Returns (gamma * xhat + beta, xhat) with xhat = (a - mean) * istd."""
    if _compiled is not None and a.flags.c_contiguous:
        return _compiled.norm_forward(a, mean, istd, gamma, beta)
    xhat = (a - mean) * istd
    out = xhat * gamma
    out += beta
    return out, xhat


def norm_backward(g, xhat, gamma, istd):
    """Returns (ga, dgamma, dbeta) for batch-statistics normalization."""
    if _compiled is not None and g.flags.c_contiguous and xhat.flags.c_contiguous:
        return _compiled.norm_backward(g, xhat, gamma, istd)
    r = g.shape[0]
    dbeta = g.sum(axis=0, dtype=np.float64)
    dgamma = np.einsum("rf,rf->f", g, xhat, dtype=np.float64)
    ga = (istd * gamma) * (g - dbeta / r - xhat * (dgamma / r))
    return (ga.astype(g.dtype, copy=False),
            dgamma.astype(g.dtype), dbeta.astype(g.dtype))

"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
walks the graph in reverse topological order accumulating gradients.
The op set is exactly what the network needs: affine maps, the neighbor
pair construction, per-feature normalization, leaky ReLU, max reductions,
concatenation, dropout, and the focal classification loss. Every op's
backward is validated against central finite differences in the tests.
"""

import numpy as np

from . import fastops
from .errors import NumericError


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = data
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        # .grad is only ever rebound, never mutated in place, so holding a
        # view from a consumer's gradient here is safe
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Seed this (scalar) tensor with gradient 1 and propagate."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def tensor(data) -> Tensor:
    return Tensor(np.asarray(data))


def matmul(a: Tensor, w: Tensor) -> Tensor:
    out = Tensor(a.data @ w.data, (a, w))

    def backward(g):
        a._accumulate(g @ w.data.T)
        w._accumulate(a.data.T @ g)

    out._backward = backward
    return out


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def backward(g):
        a._accumulate(g)
        b._accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def affine(a: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused a @ w + b (bias added in place on the gemm output)."""
    data = a.data @ w.data
    data += b.data
    out = Tensor(data, (a, w, b))

    def backward(g):
        a._accumulate(g @ w.data.T)
        w._accumulate(a.data.T @ g)
        b._accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    data, mask = fastops.leaky_forward(a.data, slope)
    out = Tensor(data, (a,))

    def backward(g):
        a._accumulate(fastops.leaky_backward(np.ascontiguousarray(g), mask, slope))

    out._backward = backward
    return out


PAIR_VARIANTS = ("edge", "local_edge", "vertex", "edge_vertex")

_PAIR_WIDTH = {"edge": lambda f: 2 * f, "local_edge": lambda f: f,
               "vertex": lambda f: 2 * f, "edge_vertex": lambda f: 6 + 2 * f}


def build_pairs_batch(xs, idxs, variant: str, positions_list) -> Tensor:
    """Per-(point, neighbor) input rows for a whole batch of clouds.

    Each cloud b contributes idxs[b].shape == (m_b, k_b) rows of width P
    laid out query-major; the clouds' blocks are stacked into one
    (sum m_b*k_b, P) matrix so the downstream kernel runs once. The pair
    layout per variant:

      edge:        [x_i, x_j - x_i]
      local_edge:  [x_j - x_i]
      vertex:      [x_i, x_j]
      edge_vertex: [p_i, p_j - p_i, x_i, x_j]

    Positions are spatial constants; no gradient flows into them.
    """
    if variant not in PAIR_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    dtype = xs[0].data.dtype
    f = xs[0].data.shape[1]
    width = _PAIR_WIDTH[variant](f)
    total = sum(idx.shape[0] * idx.shape[1] for idx in idxs)
    data = np.empty((total, width), dtype=dtype)
    offsets = []
    row0 = 0
    for b, x in enumerate(xs):
        if variant == "edge_vertex":
            if positions_list[b] is None:
                raise ValueError("edge_vertex needs positions")
            pos = np.ascontiguousarray(positions_list[b], dtype=dtype)
        else:
            pos = None
        fastops.gather_pairs(np.ascontiguousarray(x.data), pos, idxs[b],
                             variant, data, row0)
        offsets.append(row0)
        row0 += idxs[b].shape[0] * idxs[b].shape[1]

    out = Tensor(data, tuple(xs))

    def backward(g):
        g = np.ascontiguousarray(g)
        for b, x in enumerate(xs):
            gx = np.zeros_like(x.data)
            fastops.scatter_pairs(g, idxs[b], variant, gx, offsets[b])
            x._accumulate(gx)

    out._backward = backward
    return out


def build_pairs(x: Tensor, idx: np.ndarray, variant: str,
                positions: np.ndarray | None = None) -> Tensor:
    """Single-cloud pair construction (a batch of one)."""
    return build_pairs_batch([x], [np.ascontiguousarray(idx, dtype=np.int32)],
                             variant, [positions])


def neighbor_affine_batch(xs, idxs, variant: str, positions_list,
                          kernel: Tensor, bias: Tensor) -> Tensor:
    """Affine pair response for a batch of clouds, factored per point.

    Every variant's pair row is linear in (x_i, x_j, p_i, p_j), so the
    kernel application factors as out[i, u] = S[i] + T[idx[i, u]] with S
    and T computed by gemms on the point features themselves. That skips
    materializing the (m*k, P) pair matrix and divides the gemm work by
    the neighbor count. Values equal build_pairs followed by the affine
    kernel, up to float rounding.
    """
    if variant not in PAIR_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    w = kernel.data
    dtype = xs[0].data.dtype
    f = xs[0].data.shape[1]
    f_out = w.shape[1]
    if variant == "edge_vertex":
        wp1, wp2, w1, w2 = w[:3], w[3:6], w[6:6 + f], w[6 + f:]
        wp_diff = wp1 - wp2
        w_diff = None
    elif variant == "edge":
        w1, w2 = w[:f], w[f:]
        w_diff = w1 - w2
    elif variant == "vertex":
        w1, w2 = w[:f], w[f:]
        w_diff = None

    total = sum(idx.shape[0] * idx.shape[1] for idx in idxs)
    data = np.empty((total, f_out), dtype=dtype)
    offsets = []
    sides = []  # (S, T, pos_cast) per cloud, reused by the backward
    row0 = 0
    for b, x in enumerate(xs):
        xa = x.data
        m = idxs[b].shape[0]
        pos = None
        if variant == "local_edge":
            t = xa @ w
            s = bias.data - t[:m]
        elif variant == "edge":
            t = xa @ w2
            s = xa[:m] @ w_diff + bias.data
        elif variant == "vertex":
            t = xa @ w2
            s = xa[:m] @ w1 + bias.data
        else:
            if positions_list[b] is None:
                raise ValueError("edge_vertex needs positions")
            pos = np.ascontiguousarray(positions_list[b], dtype=dtype)
            t = xa @ w2 + pos @ wp2
            s = xa[:m] @ w1 + pos[:m] @ wp_diff + bias.data
        s = np.ascontiguousarray(s)
        t = np.ascontiguousarray(t)
        sides.append((s, t, pos))
        fastops.expand_pairs(s, t, idxs[b], data, row0)
        offsets.append(row0)
        row0 += m * idxs[b].shape[1]

    out = Tensor(data, tuple(xs) + (kernel, bias))

    def backward(g):
        g = np.ascontiguousarray(g)
        dw = np.zeros_like(w)
        db = np.zeros(f_out, dtype=w.dtype)
        for b, x in enumerate(xs):
            xa = x.data
            m = idxs[b].shape[0]
            ds = np.zeros((m, f_out), dtype=g.dtype)
            dt = np.zeros((xa.shape[0], f_out), dtype=g.dtype)
            fastops.reduce_pairs(g, idxs[b], offsets[b], ds, dt)
            db += ds.sum(axis=0)
            if variant == "local_edge":
                dt[:m] -= ds
                dw += xa.T @ dt
                x._accumulate(dt @ w.T)
            elif variant == "edge":
                dw[:f] += xa[:m].T @ ds
                dw[f:] += xa.T @ dt - xa[:m].T @ ds
                gx = dt @ w2.T
                gx[:m] += ds @ w_diff.T
                x._accumulate(gx)
            elif variant == "vertex":
                dw[:f] += xa[:m].T @ ds
                dw[f:] += xa.T @ dt
                gx = dt @ w2.T
                gx[:m] += ds @ w1.T
                x._accumulate(gx)
            else:
                pos = sides[b][2]
                dw[:3] += pos[:m].T @ ds
                dw[3:6] += pos.T @ dt - pos[:m].T @ ds
                dw[6:6 + f] += xa[:m].T @ ds
                dw[6 + f:] += xa.T @ dt
                gx = dt @ w2.T
                gx[:m] += ds @ w1.T
                x._accumulate(gx)
        kernel._accumulate(dw)
        bias._accumulate(db)

    out._backward = backward
    return out


def max_over_groups(a: Tensor, m: int, k: int) -> Tensor:
    """Per-feature max over each query's k neighbor rows: (m*k, F) -> (m, F).

    Ties go to the first row in the group, matching numpy argmax."""
    data, arg = fastops.group_max(np.ascontiguousarray(a.data), k)
    out = Tensor(data, (a,))

    def backward(g):
        a._accumulate(fastops.group_max_backward(np.ascontiguousarray(g), arg, k))

    out._backward = backward
    return out


def global_max(a: Tensor) -> Tensor:
    """Column-wise max over all rows: (N, F) -> (1, F)."""
    am = a.data.argmax(axis=0)
    out = Tensor(a.data[am, np.arange(a.data.shape[1])][None, :], (a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[am, np.arange(a.data.shape[1])] = g[0]
        a._accumulate(ga)

    out._backward = backward
    return out


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors))
    widths = [t.data.shape[1] for t in tensors]

    def backward(g):
        lo = 0
        for t, w in zip(tensors, widths):
            t._accumulate(g[:, lo:lo + w])
            lo += w

    out._backward = backward
    return out


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors))
    heights = [t.data.shape[0] for t in tensors]

    def backward(g):
        lo = 0
        for t, h in zip(tensors, heights):
            t._accumulate(g[lo:lo + h])
            lo += h

    out._backward = backward
    return out


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    out = Tensor(a.data[lo:hi], (a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[lo:hi] = g
        a._accumulate(ga)

    out._backward = backward
    return out


def split_rows(a: Tensor, sizes) -> list:
    """Split into consecutive row blocks sharing one gradient buffer.

    Cheaper than per-block slice_rows when every block feeds the loss:
    the parent gradient is allocated once and handed over when the last
    block's backward has run. Every returned block must therefore end up
    on the tape (true for batched forward passes, where each cloud
    contributes to the loss).
    """
    sizes = list(sizes)
    if sum(sizes) != a.data.shape[0]:
        raise ValueError("split sizes must cover all rows")
    if len(sizes) == 1:
        return [a]
    state = {"buf": None, "remaining": len(sizes)}
    outs = []
    lo = 0
    for size in sizes:
        hi = lo + size

        def backward(g, lo=lo, hi=hi):
            if state["buf"] is None:
                state["buf"] = np.zeros_like(a.data)
            state["buf"][lo:hi] = g
            state["remaining"] -= 1
            if state["remaining"] == 0:
                a._accumulate(state["buf"])

        outs.append(Tensor(a.data[lo:hi], (a,), backward))
        lo = hi
    return outs


def prefix_rows(a: Tensor, m: int) -> Tensor:
    out = Tensor(a.data[:m], (a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:m] = g
        a._accumulate(ga)

    out._backward = backward
    return out


def norm_batch(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Per-feature normalization using this array's own row statistics.

    Returns (output, mean, var); mean/var are plain arrays the caller can
    fold into running statistics.
    """
    mean, var = fastops.col_mean_var(a.data)
    mean = mean.astype(a.data.dtype, copy=False)
    istd = (1.0 / np.sqrt(var + eps)).astype(a.data.dtype, copy=False)
    data, xhat = fastops.norm_forward(a.data, mean, istd, gamma.data, beta.data)
    out = Tensor(data, (a, gamma, beta))

    def backward(g):
        ga, dgamma, dbeta = fastops.norm_backward(np.ascontiguousarray(g), xhat,
                                                  gamma.data, istd)
        beta._accumulate(dbeta)
        gamma._accumulate(dgamma)
        a._accumulate(ga)

    out._backward = backward
    return out, mean, var


def norm_leaky(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               slope: float = 0.2):
    """Fused batch-statistics normalization + leaky ReLU.

    Same math as norm_batch followed by leaky_relu, with one pass over
    the rows in each direction and no stored xhat. Returns
    (output, mean, var).
    """
    mean, var = fastops.col_mean_var(a.data)
    mean = np.ascontiguousarray(mean, dtype=a.data.dtype)
    istd = np.ascontiguousarray(1.0 / np.sqrt(var + eps), dtype=a.data.dtype)
    data, mask = fastops.norm_leaky_forward(a.data, mean, istd, gamma.data,
                                            beta.data, slope)
    out = Tensor(data, (a, gamma, beta))

    def backward(g):
        gh, dgamma, dbeta = fastops.norm_leaky_backward(
            np.ascontiguousarray(g), a.data, mask, mean, istd, gamma.data, slope)
        beta._accumulate(dbeta)
        gamma._accumulate(dgamma)
        a._accumulate(gh)

    out._backward = backward
    return out, mean, var


def norm_running(a: Tensor, gamma: Tensor, beta: Tensor,
                 run_mean: np.ndarray, run_var: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Per-feature normalization with frozen statistics (eval mode, and
    the single-row fallback where batch statistics are degenerate)."""
    istd = 1.0 / np.sqrt(run_var + eps)
    xhat = (a.data - run_mean) * istd
    out = Tensor(gamma.data * xhat + beta.data, (a, gamma, beta))

    def backward(g):
        beta._accumulate(g.sum(axis=0))
        gamma._accumulate((g * xhat).sum(axis=0))
        a._accumulate((g * gamma.data * istd).astype(a.data.dtype, copy=False))

    out._backward = backward
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: in train mode zero with probability p and scale
    survivors by 1/(1-p); eval mode is a pure pass-through."""
    if not train or p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    keep = keep.astype(a.data.dtype)
    out = Tensor(a.data * keep, (a,))

    def backward(g):
        a._accumulate(g * keep)

    out._backward = backward
    return out


def focal(logits: Tensor, labels: np.ndarray, gamma: float) -> Tensor:
    """Mean focal classification loss over the batch (scalar tensor)."""
    value, dlogits = focal_value_grad(logits.data, labels, gamma)
    out = Tensor(np.asarray(value), (logits,))

    def backward(g):
        logits._accumulate((g * dlogits).astype(logits.data.dtype, copy=False))

    out._backward = backward
    return out


def focal_value_grad(logits: np.ndarray, labels: np.ndarray, gamma: float):
    """Focal loss value and exact logit gradient.

    loss = mean over the batch of (1 - p_t)^gamma * (-log p_t), where p_t
    is the softmax probability of the true class. gamma = 0 is plain
    cross-entropy.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("logits must be (B, C)")
    b, c = z.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not np.isfinite(z).all():
        raise NumericError("non-finite logits in loss")

    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    s = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    p = np.clip(s[rows, labels], 1e-12, 1.0)
    u = 1.0 - p
    logp = np.log(p)
    value = float(np.mean(u ** gamma * (-logp)))

    # dL_i/dp, with the u -> 0 limit handled so gradients stay finite
    if gamma == 0.0:
        dldp = -1.0 / p
    else:
        u_safe = np.maximum(u, 1e-12)
        dldp = gamma * u_safe ** (gamma - 1.0) * logp - u_safe ** gamma / p
    onehot = np.zeros((b, c))
    onehot[rows, labels] = 1.0
    dlogits = (dldp * p)[:, None] * (onehot - s) / b
    return value, dlogits

"""Differentiable building blocks of the network.

Every block follows the same pattern: shared affine kernel, per-feature
normalization, leaky ReLU (slope 0.2), and for neighbor convolutions a
per-feature max over each point's neighbors afterwards. Normalization
statistics come from the rows being processed in train mode (folded into
running averages) and from the running averages in eval mode; a single
row falls back to the running averages because its own statistics are
degenerate.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericError
from .neighbors import NeighborIndex

LEAKY_SLOPE = 0.2
NORM_MOMENTUM = 0.1
NORM_EPS = 1e-5

PAIR_WIDTH = {
    "edge": lambda f: 2 * f,
    "local_edge": lambda f: f,
    "vertex": lambda f: 2 * f,
    "edge_vertex": lambda f: 6 + 2 * f,
}


@dataclass
class ConvWeights:
    """One block's learnables plus its normalization running statistics."""

    kernel: Tensor     # (P, F_out)
    bias: Tensor       # (F_out,)
    gamma: Tensor      # (F_out,)
    beta: Tensor       # (F_out,)
    run_mean: np.ndarray
    run_var: np.ndarray

    def params(self):
        return [self.kernel, self.bias, self.gamma, self.beta]


@dataclass
class HeadWeights:
    """Classifier head: two normalized hidden stages with dropout between
    them and after the second, then a plain affine to the class logits."""

    stage1: ConvWeights
    stage2: ConvWeights
    out_kernel: Tensor
    out_bias: Tensor

    def params(self):
        return self.stage1.params() + self.stage2.params() + [self.out_kernel, self.out_bias]


def init_conv_weights(rng: np.random.Generator, width_in: int, width_out: int,
                      dtype=np.float32) -> ConvWeights:
    """Uniform fan-in initialization for the kernel; identity normalization."""
    bound = 1.0 / np.sqrt(width_in)
    return ConvWeights(
        kernel=Tensor(rng.uniform(-bound, bound, (width_in, width_out)).astype(dtype)),
        bias=Tensor(np.zeros(width_out, dtype=dtype)),
        gamma=Tensor(np.ones(width_out, dtype=dtype)),
        beta=Tensor(np.zeros(width_out, dtype=dtype)),
        run_mean=np.zeros(width_out, dtype=dtype),
        run_var=np.ones(width_out, dtype=dtype),
    )


def init_head_weights(rng: np.random.Generator, width_in: int, hidden1: int,
                      hidden2: int, num_classes: int, dtype=np.float32) -> HeadWeights:
    bound = 1.0 / np.sqrt(hidden2)
    return HeadWeights(
        stage1=init_conv_weights(rng, width_in, hidden1, dtype),
        stage2=init_conv_weights(rng, hidden1, hidden2, dtype),
        out_kernel=Tensor(rng.uniform(-bound, bound, (hidden2, num_classes)).astype(dtype)),
        out_bias=Tensor(np.zeros(num_classes, dtype=dtype)),
    )


def _as_tensor(features) -> Tensor:
    return features if isinstance(features, Tensor) else Tensor(np.asarray(features))


def all_finite(arr: np.ndarray) -> bool:
    """Single-pass finiteness check: NaN and inf survive a float64 sum."""
    return bool(np.isfinite(arr.sum(dtype=np.float64)))


def _normalized(h: Tensor, w: ConvWeights, mode: str) -> Tensor:
    if mode == "train" and h.data.shape[0] > 1:
        out, mean, var = ad.norm_batch(h, w.gamma, w.beta, NORM_EPS)
        w.run_mean += NORM_MOMENTUM * (mean - w.run_mean)
        w.run_var += NORM_MOMENTUM * (var - w.run_var)
        return out
    return ad.norm_running(h, w.gamma, w.beta, w.run_mean, w.run_var, NORM_EPS)


def _norm_nonlin(h: Tensor, w: ConvWeights, mode: str,
                 normalize: bool, nonlinearity: bool) -> Tensor:
    """Normalization and nonlinearity stages shared by every block; the
    train-mode pair is fused into a single kernel."""
    if normalize and nonlinearity and mode == "train" and h.data.shape[0] > 1:
        out, mean, var = ad.norm_leaky(h, w.gamma, w.beta, NORM_EPS, LEAKY_SLOPE)
        w.run_mean += NORM_MOMENTUM * (mean - w.run_mean)
        w.run_var += NORM_MOMENTUM * (var - w.run_var)
        return out
    if normalize:
        h = _normalized(h, w, mode)
    if nonlinearity:
        h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


def conv_block(x: Tensor, w: ConvWeights, mode: str,
               normalize: bool = True, nonlinearity: bool = True) -> Tensor:
    if x.data.shape[1] != w.kernel.data.shape[0]:
        raise DataError(f"feature width {x.data.shape[1]} does not match "
                        f"kernel input width {w.kernel.data.shape[0]}")
    h = ad.affine(x, w.kernel, w.bias)
    return _norm_nonlin(h, w, mode, normalize, nonlinearity)


def neighbor_conv_batch(variant: str, items, weights: ConvWeights, mode: str = "eval",
                        normalize: bool = True, nonlinearity: bool = True) -> list:
    """Neighbor convolution over a batch of clouds.

    items is a sequence of (features, neighbor_index, positions) triples,
    one per cloud. Pair rows from all clouds share one kernel application,
    so train-mode normalization statistics pool over every (point,
    neighbor) pair in the batch; the per-point neighbor max is then taken
    per cloud. Returns one output tensor per cloud.
    """
    xs = []
    idxs = []
    positions_list = []
    shapes = []
    for features, nbrs, positions in items:
        x = _as_tensor(features)
        if not all_finite(x.data):
            raise NumericError("non-finite features in neighbor convolution")
        pair_width = PAIR_WIDTH[variant](x.data.shape[1])
        if weights.kernel.data.shape[0] != pair_width:
            raise DataError(f"pair width {pair_width} does not match kernel "
                            f"input width {weights.kernel.data.shape[0]}")
        xs.append(x)
        idxs.append(np.ascontiguousarray(nbrs.indices, dtype=np.int32))
        positions_list.append(positions)
        shapes.append(nbrs.indices.shape)
    h = ad.neighbor_affine_batch(xs, idxs, variant, positions_list,
                                 weights.kernel, weights.bias)
    h = _norm_nonlin(h, weights, mode, normalize, nonlinearity)
    if len(set(shapes)) == 1:
        # uniform batch: one grouped max over all clouds, then a cheap
        # split on the (already k-times smaller) outputs
        m, k = shapes[0]
        pooled = ad.max_over_groups(h, m * len(shapes), k)
        return ad.split_rows(pooled, [m] * len(shapes))
    outs = []
    lo = 0
    for m, k in shapes:
        block = ad.slice_rows(h, lo, lo + m * k) if len(shapes) > 1 else h
        outs.append(ad.max_over_groups(block, m, k))
        lo += m * k
    return outs


def neighbor_conv(variant: str, features, nbrs: NeighborIndex, weights: ConvWeights,
                  positions: np.ndarray | None = None, mode: str = "eval",
                  normalize: bool = True, nonlinearity: bool = True) -> Tensor:
    """Single-cloud neighbor convolution (a batch of one): build the pair
    inputs per the variant, run the shared block on every pair, then take
    the per-feature max over each point's neighbors."""
    return neighbor_conv_batch(variant, [(features, nbrs, positions)], weights,
                               mode, normalize, nonlinearity)[0]


def pointwise_conv_batch(features_list, weights: ConvWeights, mode: str = "eval",
                         normalize: bool = True, nonlinearity: bool = True) -> list:
    """Kernel-size-1 convolution over a batch: one block application with
    train statistics pooled over every row of every cloud."""
    tensors = [_as_tensor(f) for f in features_list]
    h = conv_block(ad.concat_rows(tensors), weights, mode, normalize, nonlinearity)
    return ad.split_rows(h, [t.data.shape[0] for t in tensors])


def pointwise_conv(features, weights: ConvWeights, mode: str = "eval",
                   normalize: bool = True, nonlinearity: bool = True) -> Tensor:
    """Kernel-size-1 convolution: the shared block applied to each row
    independently, so it commutes with any row permutation."""
    return conv_block(_as_tensor(features), weights, mode, normalize, nonlinearity)


def global_maxpool(features) -> Tensor:
    """Per-feature max over all points: (N, F) -> (1, F)."""
    x = _as_tensor(features)
    if x.data.shape[0] == 0:
        raise DataError("global max over an empty feature map")
    return ad.global_max(x)


def classifier_head(global_feature, head: HeadWeights, mode: str,
                    rng: np.random.Generator | None = None,
                    dropout_p: float = 0.6) -> Tensor:
    """Two hidden stages with dropout after each in train mode, then the
    final affine to logits. Eval mode is deterministic."""
    if mode == "train" and dropout_p > 0.0 and rng is None:
        raise DataError("train-mode head needs an rng for dropout")
    train = mode == "train"
    h = conv_block(_as_tensor(global_feature), head.stage1, mode)
    h = ad.dropout(h, dropout_p, rng, train)
    h = conv_block(h, head.stage2, mode)
    h = ad.dropout(h, dropout_p, rng, train)
    return ad.add_bias(ad.matmul(h, head.out_kernel), head.out_bias)

import numpy as np
import pytest

from conftest import finite_difference, rel_error

from ppcnet import autodiff as ad
from ppcnet.autodiff import Tensor
from ppcnet.errors import DataError
from ppcnet.layers import (ConvWeights, classifier_head, global_maxpool,
                           init_conv_weights, init_head_weights, neighbor_conv,
                           pointwise_conv)
from ppcnet.neighbors import NeighborIndex, knn_spatial
from ppcnet.rng import make_rng

VARIANTS = ("edge", "local_edge", "vertex", "edge_vertex")


def identity_weights(width_in, width_out, dtype=np.float64) -> ConvWeights:
    kernel = np.zeros((width_in, width_out), dtype=dtype)
    np.fill_diagonal(kernel, 1.0)
    return ConvWeights(
        kernel=Tensor(kernel), bias=Tensor(np.zeros(width_out, dtype=dtype)),
        gamma=Tensor(np.ones(width_out, dtype=dtype)),
        beta=Tensor(np.zeros(width_out, dtype=dtype)),
        run_mean=np.zeros(width_out, dtype=dtype),
        run_var=np.ones(width_out, dtype=dtype))


def random_setup(rng, n=10, k=3, f=4, f_out=5, dilation=1):
    positions = rng.standard_normal((n, 3))
    features = rng.standard_normal((n, f))
    nbrs = knn_spatial(positions, k, dilation)
    return positions, features, nbrs


class TestNeighborConvForward:
    def test_vertex_identity_kernel_passthrough(self):
        # k=1, identity kernel, no norm/nonlinearity: row i = [x_i, x_nbr(i)]
        rng = make_rng(0)
        positions, features, nbrs = random_setup(rng, n=6, k=1, f=3)
        w = identity_weights(6, 6)
        out = neighbor_conv("vertex", features, nbrs, w,
                            normalize=False, nonlinearity=False)
        expected = np.concatenate([features, features[nbrs.indices[:, 0]]], axis=1)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_local_edge_identical_points_gives_bias(self):
        rng = make_rng(1)
        features = np.tile(rng.standard_normal(4), (8, 1))
        positions = rng.standard_normal((8, 3))
        nbrs = knn_spatial(positions, 3, 1)
        w = identity_weights(4, 4)
        w.bias = Tensor(np.array([0.5, -1.0, 2.0, 0.0]))
        out = neighbor_conv("local_edge", features, nbrs, w,
                            normalize=False, nonlinearity=True)
        # pair differences vanish, so output = leaky_relu(bias) at every row
        expected = np.where(w.bias.data >= 0, w.bias.data, 0.2 * w.bias.data)
        np.testing.assert_allclose(out.data, np.tile(expected, (8, 1)), atol=1e-12)

    def test_edge_hand_evaluated(self):
        # 3 collinear points with scalar features {0, 1, 3}, k=2: compare a
        # hand-rolled evaluation of kernel + max over the two pairs
        positions = np.zeros((3, 3))
        positions[:, 0] = [0.0, 1.0, 3.0]
        features = np.array([[0.0], [1.0], [3.0]])
        nbrs = knn_spatial(positions, 2, 1)
        kernel = np.array([[0.7], [-0.3]])  # maps [x_i, x_j - x_i]
        w = identity_weights(2, 1)
        w.kernel = Tensor(kernel)
        out = neighbor_conv("edge", features, nbrs, w,
                            normalize=False, nonlinearity=False)
        for i in range(3):
            vals = []
            for j in nbrs.indices[i]:
                pair = np.array([features[i, 0], features[j, 0] - features[i, 0]])
                vals.append(float(pair @ kernel.ravel()))
            assert np.isclose(out.data[i, 0], max(vals))

    def test_neighbor_order_invariance(self):
        rng = make_rng(2)
        positions, features, nbrs = random_setup(rng, n=12, k=4, f=5)
        w = init_conv_weights(make_rng(3), 10, 6, dtype=np.float64)
        base = neighbor_conv("vertex", features, nbrs, w, mode="eval").data
        shuffled = NeighborIndex(nbrs.indices[:, ::-1].copy(), nbrs.k,
                                 nbrs.dilation, nbrs.space)
        flipped = neighbor_conv("vertex", features, shuffled, w, mode="eval").data
        np.testing.assert_allclose(base, flipped, atol=1e-7)

    def test_edge_contains_local_edge(self):
        # zeroing the kernel block that acts on x_i reduces edge to local_edge
        rng = make_rng(4)
        positions, features, nbrs = random_setup(rng, n=9, k=3, f=4)
        w_edge = init_conv_weights(make_rng(5), 8, 6, dtype=np.float64)
        w_edge.kernel.data[:4, :] = 0.0
        w_local = ConvWeights(
            kernel=Tensor(w_edge.kernel.data[4:].copy()), bias=w_edge.bias,
            gamma=w_edge.gamma, beta=w_edge.beta,
            run_mean=w_edge.run_mean, run_var=w_edge.run_var)
        a = neighbor_conv("edge", features, nbrs, w_edge, mode="eval").data
        b = neighbor_conv("local_edge", features, nbrs, w_local, mode="eval").data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_edge_vertex_requires_positions(self):
        rng = make_rng(6)
        _, features, nbrs = random_setup(rng, n=8, k=2, f=3)
        with pytest.raises(ValueError, match="positions"):
            neighbor_conv("edge_vertex", features, nbrs,
                          init_conv_weights(rng, 12, 4, dtype=np.float64))

    def test_dimension_mismatch(self):
        rng = make_rng(7)
        positions, features, nbrs = random_setup(rng, n=8, k=2, f=3)
        w = init_conv_weights(rng, 99, 4, dtype=np.float64)
        with pytest.raises(DataError, match="width"):
            neighbor_conv("vertex", features, nbrs, w)

    def test_nan_rejected(self):
        rng = make_rng(8)
        positions, features, nbrs = random_setup(rng, n=8, k=2, f=3)
        features[0, 0] = np.nan
        from ppcnet.errors import NumericError
        with pytest.raises(NumericError):
            neighbor_conv("local_edge", features, nbrs,
                          init_conv_weights(rng, 3, 4, dtype=np.float64))


@pytest.mark.parametrize("variant", VARIANTS)
def test_factored_affine_matches_materialized_pairs(variant):
    # the layer computes pair @ kernel + bias as S[i] + T[j] from small
    # per-point gemms; it must match the materialized-pair reference
    rng = make_rng(31)
    for trial in range(10):
        n = int(rng.integers(6, 20))
        k = int(rng.integers(1, min(5, n)))
        f = int(rng.integers(1, 7))
        f_out = int(rng.integers(1, 7))
        positions = rng.standard_normal((n, 3))
        features = rng.standard_normal((n, f))
        nbrs = knn_spatial(positions, k, 1)
        from ppcnet.layers import PAIR_WIDTH
        w = init_conv_weights(rng, PAIR_WIDTH[variant](f), f_out, dtype=np.float64)
        pos = positions if variant == "edge_vertex" else None

        factored = ad.neighbor_affine_batch(
            [Tensor(features)], [nbrs.indices], variant, [pos],
            w.kernel, w.bias).data
        pairs = ad.build_pairs(Tensor(features), nbrs.indices, variant, pos).data
        reference = pairs @ w.kernel.data + w.bias.data
        np.testing.assert_allclose(factored, reference, atol=1e-12)


def conv_loss(variant, features, positions, nbrs, w, probe, mode):
    out = neighbor_conv(variant, Tensor(features), nbrs, w,
                        positions=positions if variant == "edge_vertex" else None,
                        mode=mode)
    return out, float((out.data * probe).sum())


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("mode", ["eval", "train"])
def test_neighbor_conv_gradients(variant, mode):
    """Kernel, bias, gamma, beta, and input-feature gradients against
    central finite differences at float64."""
    rng = make_rng(hash((variant, mode)) % 2**31)
    n, k, f, f_out = 9, 3, 4, 5
    positions = rng.standard_normal((n, 3))
    features = rng.standard_normal((n, f))
    nbrs = knn_spatial(positions, k, 1)
    from ppcnet.layers import PAIR_WIDTH
    w = init_conv_weights(rng, PAIR_WIDTH[variant](f), f_out, dtype=np.float64)
    w.run_mean = rng.standard_normal(f_out) * 0.1
    w.run_var = rng.uniform(0.5, 2.0, f_out)
    probe = rng.standard_normal((n, f_out))

    out, _ = conv_loss(variant, features, positions, nbrs, w, probe, mode)
    loss = Tensor(np.asarray((out.data * probe).sum()), (out,),
                  backward=lambda g: out._accumulate(g * probe))
    loss.backward()

    arrays = [w.kernel.data, w.bias.data, w.gamma.data, w.beta.data, features]
    run_mean, run_var = w.run_mean.copy(), w.run_var.copy()

    def fn():
        w.run_mean[...] = run_mean  # undo train-mode stat updates
        w.run_var[...] = run_var
        return conv_loss(variant, features, positions, nbrs, w, probe, mode)[1]

    fd = finite_difference(fn, arrays)
    analytic = [w.kernel.grad, w.bias.grad, w.gamma.grad, w.beta.grad, None]
    for got, want, name in zip(analytic[:4], fd[:4], ["kernel", "bias", "gamma", "beta"]):
        assert rel_error(got, want) < 1e-6, f"{variant}/{mode} {name}"


class TestPointwiseConv:
    def test_identity(self):
        rng = make_rng(9)
        x = rng.standard_normal((6, 4))
        out = pointwise_conv(x, identity_weights(4, 4),
                             normalize=False, nonlinearity=False)
        np.testing.assert_array_equal(out.data, x)

    def test_row_permutation_equivariance(self):
        rng = make_rng(10)
        x = rng.standard_normal((8, 4))
        w = init_conv_weights(make_rng(11), 4, 6, dtype=np.float64)
        perm = rng.permutation(8)
        a = pointwise_conv(x, w, mode="eval").data[perm]
        b = pointwise_conv(x[perm], w, mode="eval").data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_matches_dense_matmul(self):
        rng = make_rng(12)
        x = rng.standard_normal((8, 4))
        w = init_conv_weights(make_rng(13), 4, 3, dtype=np.float64)
        out = pointwise_conv(x, w, normalize=False, nonlinearity=False)
        np.testing.assert_allclose(out.data, x @ w.kernel.data + w.bias.data, atol=1e-12)

    def test_gradients(self):
        rng = make_rng(14)
        x = rng.standard_normal((7, 4))
        w = init_conv_weights(make_rng(15), 4, 3, dtype=np.float64)
        probe = rng.standard_normal((7, 3))
        out = pointwise_conv(Tensor(x), w, mode="train")
        loss = Tensor(np.asarray((out.data * probe).sum()), (out,),
                      backward=lambda g: out._accumulate(g * probe))
        loss.backward()
        rm, rv = w.run_mean.copy(), w.run_var.copy()

        def fn():
            w.run_mean[...] = rm
            w.run_var[...] = rv
            return float((pointwise_conv(Tensor(x), w, mode="train").data * probe).sum())

        fd = finite_difference(fn, [w.kernel.data, w.bias.data])
        assert rel_error(w.kernel.grad, fd[0]) < 1e-6
        assert rel_error(w.bias.grad, fd[1]) < 1e-6


class TestGlobalMaxpool:
    def test_definition(self):
        out = global_maxpool(np.array([[1.0, 5.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 5.0]])

    def test_permutation_invariant_bit_exact(self):
        rng = make_rng(16)
        x = rng.standard_normal((20, 6))
        perm = rng.permutation(20)
        np.testing.assert_array_equal(global_maxpool(x).data, global_maxpool(x[perm]).data)

    def test_single_row(self):
        x = np.array([[4.0, -1.0, 0.5]])
        np.testing.assert_array_equal(global_maxpool(x).data, x)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            global_maxpool(np.zeros((0, 3)))


class TestClassifierHead:
    def test_eval_deterministic(self):
        head = init_head_weights(make_rng(17), 8, 16, 8, 3, dtype=np.float64)
        x = make_rng(18).standard_normal((1, 8))
        a = classifier_head(x, head, "eval").data
        b = classifier_head(x, head, "eval").data
        np.testing.assert_array_equal(a, b)
        assert a.shape == (1, 3)

    def test_dropout_fraction(self):
        # aggregate zeroed-activation fraction across many train forwards
        head = init_head_weights(make_rng(19), 8, 64, 64, 2, dtype=np.float64)
        x = make_rng(20).standard_normal((1, 8))
        rng = make_rng(21)
        zeros = 0
        total = 0
        for _ in range(100):
            h1 = ad.dropout(pointwise_conv(Tensor(x), head.stage1, mode="eval"),
                            0.6, rng, train=True)
            zeros += int((h1.data == 0).sum())
            total += h1.data.size
        frac = zeros / total
        assert abs(frac - 0.6) < 0.02

    def test_train_gradients_with_fixed_mask(self):
        head = init_head_weights(make_rng(22), 6, 8, 8, 3, dtype=np.float64)
        x = make_rng(23).standard_normal((1, 6))
        probe = make_rng(24).standard_normal((1, 3))

        def run():
            out = classifier_head(Tensor(x), head, "train", rng=make_rng(99))
            return out, float((out.data * probe).sum())

        out, _ = run()
        loss = Tensor(np.asarray((out.data * probe).sum()), (out,),
                      backward=lambda g: out._accumulate(g * probe))
        loss.backward()
        arrays = [head.stage1.kernel.data, head.stage2.kernel.data,
                  head.out_kernel.data, head.out_bias.data]
        fd = finite_difference(lambda: run()[1], arrays)
        got = [head.stage1.kernel.grad, head.stage2.kernel.grad,
               head.out_kernel.grad, head.out_bias.grad]
        for a, b in zip(got, fd):
            assert rel_error(a, b) < 1e-6

    def test_single_row_uses_running_stats(self):
        # train mode on one row must not divide by a zero batch variance
        head = init_head_weights(make_rng(25), 4, 8, 8, 2, dtype=np.float64)
        x = make_rng(26).standard_normal((1, 4))
        out = classifier_head(Tensor(x), head, "train", rng=make_rng(27))
        assert np.isfinite(out.data).all()

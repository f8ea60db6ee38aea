"""Backend parity: the numpy fallbacks must compute exactly what the
compiled kernels compute (up to float addition order)."""

import numpy as np
import pytest

from ppcnet import fastops
from ppcnet.rng import make_rng

pytestmark = pytest.mark.skipif(not fastops.compiled_active(),
                                reason="compiled kernels not built")


@pytest.fixture
def fallback(monkeypatch):
    """Run the dispatched functions through their numpy paths."""
    monkeypatch.setattr(fastops, "_compiled", None)
    return fastops


def pair_setup(seed, variant, dtype=np.float64):
    rng = make_rng(seed)
    n, m, k, f = 12, 7, 3, 4
    x = np.ascontiguousarray(rng.standard_normal((n, f)), dtype=dtype)
    pos = np.ascontiguousarray(rng.standard_normal((n, 3)), dtype=dtype)
    idx = np.stack([rng.choice(np.delete(np.arange(n), i), size=k, replace=False)
                    for i in range(m)]).astype(np.int32)
    width = {"edge": 2 * f, "local_edge": f, "vertex": 2 * f, "edge_vertex": 6 + 2 * f}
    return x, pos, idx, width[variant]


@pytest.mark.parametrize("variant", sorted(fastops.VARIANT_CODES))
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_gather_scatter_pairs(fallback, variant, dtype):
    x, pos, idx, width = pair_setup(3, variant, dtype)
    m, k = idx.shape
    compiled_out = np.zeros((m * k, width), dtype=dtype)
    import ppcnet._fastops as comp
    comp.gather_pairs(x, pos, idx, fastops.VARIANT_CODES[variant], compiled_out, 0)
    numpy_out = np.zeros((m * k, width), dtype=dtype)
    fallback.gather_pairs(x, pos if variant == "edge_vertex" else None,
                          idx, variant, numpy_out, 0)
    np.testing.assert_allclose(compiled_out, numpy_out, atol=1e-6)

    g = np.ascontiguousarray(make_rng(4).standard_normal((m * k, width)), dtype=dtype)
    gx_compiled = np.zeros_like(x)
    comp.scatter_pairs(g, idx, fastops.VARIANT_CODES[variant], gx_compiled, 0)
    gx_numpy = np.zeros_like(x)
    fallback.scatter_pairs(g, idx, variant, gx_numpy, 0)
    np.testing.assert_allclose(gx_compiled, gx_numpy, atol=1e-5)


def test_expand_reduce_pairs(fallback):
    rng = make_rng(5)
    n, m, k, f = 10, 6, 4, 5
    s = np.ascontiguousarray(rng.standard_normal((m, f)))
    t = np.ascontiguousarray(rng.standard_normal((n, f)))
    idx = rng.integers(0, n, (m, k)).astype(np.int32)
    import ppcnet._fastops as comp
    a = np.zeros((m * k, f))
    comp.expand_pairs(s, t, idx, a, 0)
    b = np.zeros((m * k, f))
    fallback.expand_pairs(s, t, idx, b, 0)
    np.testing.assert_array_equal(a, b)

    g = np.ascontiguousarray(rng.standard_normal((m * k, f)))
    ds_a = np.zeros((m, f))
    dt_a = np.zeros((n, f))
    comp.reduce_pairs(g, idx, 0, ds_a, dt_a)
    ds_b = np.zeros((m, f))
    dt_b = np.zeros((n, f))
    fallback.reduce_pairs(g, idx, 0, ds_b, dt_b)
    np.testing.assert_allclose(ds_a, ds_b, atol=1e-12)
    np.testing.assert_allclose(dt_a, dt_b, atol=1e-12)


def test_group_max(fallback):
    rng = make_rng(6)
    h = np.ascontiguousarray(rng.standard_normal((48, 5)))
    h[8] = h[9]  # force a within-group tie
    import ppcnet._fastops as comp
    out_a, arg_a = comp.group_max(h, 4)
    out_b, arg_b = fallback.group_max(h, 4)
    np.testing.assert_array_equal(out_a, out_b)
    np.testing.assert_array_equal(arg_a, arg_b)  # first-occurrence tie rule

    g = np.ascontiguousarray(rng.standard_normal(out_a.shape))
    np.testing.assert_array_equal(comp.group_max_backward(g, arg_a, 4),
                                  fallback.group_max_backward(g, arg_b, 4))


def test_leaky(fallback):
    rng = make_rng(7)
    a = np.ascontiguousarray(rng.standard_normal((40, 6)))
    import ppcnet._fastops as comp
    out_a, mask_a = comp.leaky_forward(a, 0.2)
    out_b, mask_b = fallback.leaky_forward(a, 0.2)
    np.testing.assert_array_equal(out_a, out_b)
    np.testing.assert_array_equal(mask_a, mask_b)
    g = np.ascontiguousarray(rng.standard_normal((40, 6)))
    np.testing.assert_array_equal(comp.leaky_backward(g, mask_a, 0.2),
                                  fallback.leaky_backward(g, mask_b, 0.2))


def test_norm_kernels(fallback):
    rng = make_rng(8)
    h = np.ascontiguousarray(rng.standard_normal((60, 4)) * 2 + 1)
    import ppcnet._fastops as comp
    mean_a, var_a = comp.col_mean_var(h)
    mean_b, var_b = fallback.col_mean_var(h)
    np.testing.assert_allclose(mean_a, mean_b, atol=1e-12)
    np.testing.assert_allclose(var_a, var_b, atol=1e-12)

    istd = 1.0 / np.sqrt(var_a + 1e-5)
    gamma = rng.uniform(0.5, 1.5, 4)
    beta = rng.standard_normal(4)
    out_a, mask_a = comp.norm_leaky_forward(h, mean_a, istd, gamma, beta, 0.2)
    out_b, mask_b = fallback.norm_leaky_forward(h, mean_a, istd, gamma, beta, 0.2)
    np.testing.assert_allclose(out_a, out_b, atol=1e-12)
    np.testing.assert_array_equal(mask_a, mask_b)

    g = np.ascontiguousarray(rng.standard_normal((60, 4)))
    gh_a, dgamma_a, dbeta_a = comp.norm_leaky_backward(g, h, mask_a, mean_a, istd, gamma, 0.2)
    gh_b, dgamma_b, dbeta_b = fallback.norm_leaky_backward(g, h, mask_b, mean_a, istd, gamma, 0.2)
    np.testing.assert_allclose(gh_a, gh_b, atol=1e-10)
    np.testing.assert_allclose(dgamma_a, dgamma_b, atol=1e-10)
    np.testing.assert_allclose(dbeta_a, dbeta_b, atol=1e-10)

    fwd_a = comp.norm_forward(h, mean_a, istd, gamma, beta)
    fwd_b = fallback.norm_forward(h, mean_a, istd, gamma, beta)
    np.testing.assert_allclose(fwd_a[0], fwd_b[0], atol=1e-12)
    bwd_a = comp.norm_backward(g, fwd_a[1], gamma, istd)
    bwd_b = fallback.norm_backward(g, fwd_b[1], gamma, istd)
    for x, y in zip(bwd_a, bwd_b):
        np.testing.assert_allclose(x, y, atol=1e-10)


def test_network_forward_matches_across_backends(fallback, monkeypatch):
    # a full eval forward agrees between backends within float tolerance
    from conftest import random_cloud
    from ppcnet.network import build_network, forward, tiny_spec
    spec = tiny_spec(3)
    pc = random_cloud(make_rng(9), 96)
    model = build_network(spec, make_rng(10), dtype=np.float64)
    with_fallback = forward(model, pc, mode="eval", rng=make_rng(11)).data
    monkeypatch.undo()  # restore the compiled dispatch
    with_compiled = forward(model, pc, mode="eval", rng=make_rng(11)).data
    np.testing.assert_allclose(with_fallback, with_compiled, atol=1e-9)

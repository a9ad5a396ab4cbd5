import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import check_grads
from pamm.experts import (
    ExpertBank,
    Linear,
    ParamPrior,
    ParamStream,
    TaskRouter,
    add_prior,
    mixture,
    noise_logits,
    noisy_topk,
    pe_forward,
    route,
)
from pamm.tensor import Rng, ShapeError, Tensor, compute_grads, softmax, sum_


def make_router(in_dim=16, experts=15, seed=0):
    return TaskRouter.init(0, in_dim, experts, Rng(seed, 0))


def rand_map(shape, seed=0, requires_grad=False):
    return Tensor(np.random.default_rng(seed).normal(size=shape),
                  requires_grad=requires_grad)


# ---------------------------------------------------------------- route

def test_route_zero_input_uniform_gates():
    router = make_router()
    gates = route(Tensor(np.zeros((16, 4, 4))), router)
    np.testing.assert_allclose(gates.data, np.full(15, 1 / 15), atol=1e-15)


def test_route_constant_map_equals_single_pixel():
    router = make_router(seed=3)
    const = Tensor(np.tile(np.arange(16.0).reshape(16, 1, 1), (1, 5, 3)))
    single = Tensor(np.arange(16.0).reshape(16, 1, 1))
    np.testing.assert_allclose(route(const, router).data,
                               route(single, router).data, atol=1e-12)


def test_route_gates_normalized():
    router = make_router(seed=4)
    gates = route(rand_map((16, 6, 6), seed=5), router)
    assert abs(gates.data.sum() - 1.0) <= 1e-12
    assert (gates.data >= 0).all()


def test_route_channel_mismatch():
    with pytest.raises(ShapeError):
        route(rand_map((8, 4, 4)), make_router(in_dim=16))


def test_router_requires_divisible_channels():
    with pytest.raises(ValueError):
        TaskRouter.init(0, 10, 4, Rng(0, 0))


# ---------------------------------------------------------------- noisy_topk

def test_topk_full_k_is_plain_softmax():
    gates = Tensor([0.1, 0.9, 0.2])
    noise = Tensor([0.0, 0.0, 0.0])
    out = noisy_topk(gates, noise, k=3, training=False)
    np.testing.assert_array_equal(out.data, softmax(gates, axis=0).data)


def test_topk_one_keeps_only_max():
    gates = Tensor([0.1, 0.9, 0.2])
    out = noisy_topk(gates, Tensor(np.zeros(3)), k=1, training=False)
    probs = softmax(gates, axis=0).data
    assert out.data[1] == probs[1]
    assert out.data[0] == 0.0 and out.data[2] == 0.0


def test_topk_training_reproducible_with_seed():
    gates = Tensor(np.random.default_rng(1).normal(size=8))
    noise = Tensor(np.random.default_rng(2).normal(size=8))
    a = noisy_topk(gates, noise, k=3, training=True, rng=Rng(77, 5))
    b = noisy_topk(gates, noise, k=3, training=True, rng=Rng(77, 5))
    np.testing.assert_array_equal(a.data, b.data)
    c = noisy_topk(gates, noise, k=3, training=True, rng=Rng(77, 6))
    assert not np.array_equal(a.data, c.data)


def test_topk_eval_ignores_rng():
    gates = Tensor(np.random.default_rng(3).normal(size=6))
    noise = Tensor(np.random.default_rng(4).normal(size=6))
    a = noisy_topk(gates, noise, k=2, training=False, rng=Rng(1, 1))
    b = noisy_topk(gates, noise, k=2, training=False, rng=Rng(2, 2))
    np.testing.assert_array_equal(a.data, b.data)


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_topk_support_bound(k, seed):
    gen = np.random.default_rng(seed)
    gates = Tensor(gen.normal(size=8))
    out = noisy_topk(gates, Tensor(gen.normal(size=8)), k=k, training=False)
    assert (out.data != 0).sum() <= k
    assert (out.data >= 0).all()


def test_topk_k_out_of_range():
    gates = Tensor(np.zeros(4))
    with pytest.raises(ValueError):
        noisy_topk(gates, gates, k=0, training=False)
    with pytest.raises(ValueError):
        noisy_topk(gates, gates, k=5, training=False)
    with pytest.raises(ValueError):
        noisy_topk(gates, gates, k=2, training=True, rng=None)


# ---------------------------------------------------------------- mixture

def test_mixture_one_hot_selects_single_expert():
    bank = ExpertBank.init(4, 3, 8, Rng(9, 0))
    x = rand_map((8, 2, 2), seed=6)
    r = Tensor([0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(mixture(x, r, bank).data, bank.experts[1](x).data)


def test_mixture_identical_experts_factorizes():
    rng = Rng(10, 0)
    proto = Linear.init(3, 8, rng)
    bank = ExpertBank([Linear(proto.w, proto.b) for _ in range(5)])
    x = rand_map((8, 3, 3), seed=7)
    r = Tensor([0.2, 0.0, 0.3, 0.1, 0.0])
    expected = 0.6 * proto(x).data
    np.testing.assert_allclose(mixture(x, r, bank).data, expected, atol=1e-12)


def test_mixture_sparse_equals_dense_sum():
    bank = ExpertBank.init(6, 4, 8, Rng(11, 0))
    x = rand_map((8, 3, 3), seed=8)
    weights = np.array([0.0, 0.4, 0.0, 0.1, 0.0, 0.5])
    got = mixture(x, Tensor(weights), bank).data
    dense = sum(weights[j] * bank.experts[j](x).data for j in range(6))
    np.testing.assert_allclose(got, dense, atol=1e-12)


def test_mixture_linear_in_weights():
    bank = ExpertBank.init(5, 3, 8, Rng(12, 0))
    x = rand_map((8, 2, 2), seed=9)
    gen = np.random.default_rng(10)
    r1, r2 = np.abs(gen.normal(size=5)), np.abs(gen.normal(size=5))
    lhs = mixture(x, Tensor(r1 + r2), bank).data
    rhs = mixture(x, Tensor(r1), bank).data + mixture(x, Tensor(r2), bank).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_mixture_weight_length_mismatch():
    bank = ExpertBank.init(4, 3, 8, Rng(13, 0))
    with pytest.raises(ShapeError):
        mixture(rand_map((8, 2, 2)), Tensor(np.zeros(5)), bank)


# ---------------------------------------------------------------- pe_forward

def test_pe_forward_zero_bank_gives_base_only():
    rng = Rng(14, 0)
    router = TaskRouter.init(0, 8, 4, rng)
    bank = ExpertBank.init(4, 3, 8, rng)
    for e in bank.experts:
        e.w.data[:] = 0.0
        e.b.data[:] = 0.0
    base = Linear.init(3, 8, rng)
    x = rand_map((8, 3, 3), seed=11)
    out = pe_forward(x, router, bank, base, k=2, training=False)
    np.testing.assert_allclose(out.data, base(x).data, atol=1e-14)


def test_pe_forward_zero_base_gives_mixture_only():
    rng = Rng(15, 0)
    router = TaskRouter.init(0, 8, 4, rng)
    bank = ExpertBank.init(4, 3, 8, rng)
    base = Linear.init(3, 8, rng)
    base.w.data[:] = 0.0
    base.b.data[:] = 0.0
    x = rand_map((8, 3, 3), seed=12)
    out = pe_forward(x, router, bank, base, k=2, training=False)
    r = noisy_topk(route(x, router), noise_logits(x, router), 2, False)
    np.testing.assert_allclose(out.data, mixture(x, r, bank).data, atol=1e-14)


def test_pe_forward_is_sum_of_branches():
    rng = Rng(16, 0)
    router = TaskRouter.init(0, 8, 5, rng)
    bank = ExpertBank.init(5, 3, 8, rng)
    base = Linear.init(3, 8, rng)
    x = rand_map((8, 4, 4), seed=13)
    out = pe_forward(x, router, bank, base, k=3, training=False)
    r = noisy_topk(route(x, router), noise_logits(x, router), 3, False)
    expected = mixture(x, r, bank).data + base(x).data
    np.testing.assert_allclose(out.data, expected, atol=1e-14)


# ---------------------------------------------------------------- add_prior

def test_add_prior_zero_is_identity():
    y = rand_map((4, 3, 3), seed=14)
    out = add_prior(y, ParamPrior.init(0, 4))
    np.testing.assert_array_equal(out.data, y.data)


def test_add_prior_broadcast_and_spatial_invariance():
    prior = ParamPrior(0, Tensor(np.arange(4.0), requires_grad=True))
    zero = Tensor(np.zeros((4, 2, 3)))
    out = add_prior(zero, prior)
    for r in range(2):
        for c in range(3):
            np.testing.assert_array_equal(out.data[:, r, c], np.arange(4.0))
    # integer-valued tensors add exactly in float64, so the added component
    # can be compared bitwise across positions
    gen = np.random.default_rng(15)
    y = Tensor(gen.integers(-50, 50, size=(4, 2, 3)).astype(float))
    shifted = add_prior(y, prior)
    added = shifted.data - y.data
    assert np.array_equal(added, np.broadcast_to(added[:, :1, :1], added.shape))
    # generic floats: constant to machine precision
    yf = rand_map((4, 2, 3), seed=15)
    addedf = add_prior(yf, prior).data - yf.data
    np.testing.assert_allclose(
        addedf, np.broadcast_to(addedf[:, :1, :1], addedf.shape), atol=1e-15)


def test_add_prior_length_mismatch():
    with pytest.raises(ShapeError):
        add_prior(rand_map((4, 2, 2)), ParamPrior.init(0, 5))


# ---------------------------------------------------------------- stream

def test_stream_bc_pipelines_do_not_share_gradients():
    rng = Rng(17, 0)
    b_stream = ParamStream.init(2, 8, 3, 4, 2, rng.spawn(1))
    c_stream = ParamStream.init(2, 8, 3, 4, 2, rng.spawn(2))
    x = rand_map((8, 3, 3), seed=16, requires_grad=True)
    loss = sum_(b_stream.forward(x, 0, training=False) * 1.5)
    c_params = list(c_stream.parameters("c").values())
    grads = compute_grads(loss, c_params)
    assert all(np.all(g == 0) for g in grads)
    b_params = list(b_stream.parameters("b").values())
    grads_b = compute_grads(loss, b_params)
    assert any(np.any(g != 0) for g in grads_b)


def test_stream_gradients_match_fd():
    rng = Rng(18, 0)
    stream = ParamStream.init(1, 8, 2, 3, 2, rng)
    x = rand_map((8, 2, 2), seed=17, requires_grad=True)
    weight = rand_map((2, 2, 2), seed=18)
    params = list(stream.parameters("s").values()) + [x]

    def loss():
        return sum_(stream.forward(x, 0, training=False) * weight)

    check_grads(loss, params)


def test_stream_shared_bank_option():
    rng = Rng(19, 0)
    bank = ExpertBank.init(4, 3, 8, rng)
    b_stream = ParamStream.init(1, 8, 3, 4, 2, rng, bank=bank)
    c_stream = ParamStream.init(1, 8, 3, 4, 2, rng, bank=bank)
    assert b_stream.bank is c_stream.bank

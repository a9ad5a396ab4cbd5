import itertools
import math

import numpy as np
import pytest

from fdcheck import check_grads
from pamm.hilbert import scan_order, serialize, deserialize
from pamm.ssm import DiscreteParams, SSMParams, discretize, mdhs_scan, phi_zoh, selective_scan
from pamm.tensor import ShapeError, Tensor, sum_, transpose, softplus


def naive_scan(x, abar, bbar, c, d):
    """Per-step pure-python reference: the recurrence, spelled out."""
    length, dim = x.shape
    state = abar.shape[-1]
    h = np.zeros((dim, state))
    y = np.zeros((length, dim))
    for k in range(length):
        for di in range(dim):
            for n in range(state):
                h[di, n] = abar[k, di, n] * h[di, n] + bbar[k, di, n] * x[k, di]
        for di in range(dim):
            y[k, di] = sum(c[k, n] * h[di, n] for n in range(state)) + d[di] * x[k, di]
    return y


def make_instance(gen, length, dim, state):
    a = Tensor(-np.exp(gen.normal(size=(dim, state)) * 0.3))
    b = Tensor(gen.normal(size=(length, state)))
    c = Tensor(gen.normal(size=(length, state)))
    delta = Tensor(np.exp(gen.uniform(math.log(1e-3), math.log(0.5), size=(length, dim))))
    d = Tensor(gen.normal(size=(dim,)))
    x = Tensor(gen.normal(size=(length, dim)))
    return x, a, b, c, delta, d


# ---------------------------------------------------------------- discretize

def test_discretize_reference_values():
    a = Tensor([[-1.0]])
    b = Tensor([[1.0]])
    delta = Tensor([[1.0]])
    disc = discretize(a, b, delta)
    assert abs(disc.abar.data[0, 0, 0] - 0.36788) < 1e-5
    assert abs(disc.bbar.data[0, 0, 0] - 0.63212) < 1e-5


def test_discretize_depends_on_product():
    one = discretize(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([[1.0]]))
    two = discretize(Tensor([[-2.0]]), Tensor([[1.0]]), Tensor([[0.5]]))
    assert abs(one.abar.data[0, 0, 0] - two.abar.data[0, 0, 0]) < 1e-15
    assert abs(one.abar.data[0, 0, 0] - math.exp(-1.0)) < 1e-12


def test_discretize_small_product_limit():
    # |delta * a| = 1e-5: bbar must agree with delta * b to well below 1e-8
    disc = discretize(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([[1e-5]]))
    assert abs(disc.bbar.data[0, 0, 0] - 1e-5) < 1e-8


def test_discretize_guard_is_continuous():
    vals = []
    for z in (-1.2e-4, -0.8e-4):
        phi = phi_zoh(Tensor([z])).data[0]
        vals.append(phi)
        assert abs(phi - (math.expm1(z) / z)) < 1e-12
    assert abs(vals[0] - vals[1]) < 1e-4


def test_discretize_rejects_bad_signs():
    with pytest.raises(ValueError):
        discretize(Tensor([[1.0]]), Tensor([[1.0]]), Tensor([[1.0]]))
    with pytest.raises(ValueError):
        discretize(Tensor([[-1.0]]), Tensor([[1.0]]), Tensor([[0.0]]))


def test_abar_in_unit_interval():
    gen = np.random.default_rng(0)
    x, a, b, c, delta, d = make_instance(gen, 12, 3, 4)
    disc = discretize(a, b, delta)
    assert (disc.abar.data > 0).all() and (disc.abar.data < 1).all()


# ---------------------------------------------------------------- scan

def test_scan_memoryless_when_abar_zero():
    gen = np.random.default_rng(1)
    length, dim, state = 6, 2, 3
    x = Tensor(gen.normal(size=(length, dim)))
    bbar = Tensor(gen.normal(size=(length, dim, state)))
    c = Tensor(gen.normal(size=(length, state)))
    d = Tensor(gen.normal(size=(dim,)))
    disc = DiscreteParams(abar=Tensor(np.full((length, dim, state), 1e-300)),
                          bbar=bbar)
    out = selective_scan(x, disc, c, d)
    expected = (np.einsum("ldn,ln->ld", bbar.data, c.data) + d.data) * x.data
    np.testing.assert_allclose(out.data, expected, atol=1e-290)


def test_scan_hand_unrolled():
    # abar=0.5, bbar=1, c=1, d=0, x=[1,1] -> h=[1,1.5], y=[1,1.5]
    shape = (2, 1, 1)
    disc = DiscreteParams(abar=Tensor(np.full(shape, 0.5)),
                          bbar=Tensor(np.ones(shape)))
    out = selective_scan(Tensor([[1.0], [1.0]]), disc,
                         Tensor([[1.0], [1.0]]), Tensor([0.0]))
    np.testing.assert_allclose(out.data, [[1.0], [1.5]], atol=1e-15)


def test_scan_matches_naive_loop():
    gen = np.random.default_rng(2)
    for trial in range(12):
        length = int(gen.integers(1, 40))
        dim = int(gen.integers(1, 5))
        state = int(gen.integers(1, 6))
        x, a, b, c, delta, d = make_instance(gen, length, dim, state)
        disc = discretize(a, b, delta)
        got = selective_scan(x, disc, c, d).data
        want = naive_scan(x.data, disc.abar.data, disc.bbar.data, c.data, d.data)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_scan_group_axis_matches_single():
    gen = np.random.default_rng(3)
    x, a, b, c, delta, d = make_instance(gen, 9, 2, 3)
    disc = discretize(a, b, delta)
    single = selective_scan(x, disc, c, d).data
    from pamm.tensor import stack
    xg = stack([x, x], axis=0)
    discg = discretize(a, stack([b, b], axis=0), stack([delta, delta], axis=0))
    grouped = selective_scan(xg, discg, stack([c, c], axis=0), d).data
    np.testing.assert_array_equal(grouped[0], single)
    np.testing.assert_array_equal(grouped[1], single)


def test_scan_linear_in_input_with_fixed_params():
    gen = np.random.default_rng(4)
    x1, a, b, c, delta, d = make_instance(gen, 16, 3, 4)
    x2 = Tensor(gen.normal(size=x1.shape))
    disc = discretize(a, b, delta)
    alpha, beta = 0.7, -1.3
    mixed = selective_scan(Tensor(alpha * x1.data + beta * x2.data), disc, c, d).data
    separate = (alpha * selective_scan(x1, disc, c, d).data
                + beta * selective_scan(x2, disc, c, d).data)
    denom = np.maximum(np.abs(separate), 1e-12)
    assert np.max(np.abs(mixed - separate) / denom) < 1e-10


def test_scan_bounded_long_sequence():
    gen = np.random.default_rng(5)
    length, dim, state = 4096, 2, 4
    x, a, b, c, delta, d = make_instance(gen, length, dim, state)
    x = Tensor(gen.uniform(-10, 10, size=(length, dim)))
    disc = discretize(a, b, delta)
    out = selective_scan(x, disc, c, d)
    assert np.all(np.isfinite(out.data))


def test_scan_shape_errors():
    gen = np.random.default_rng(6)
    x, a, b, c, delta, d = make_instance(gen, 5, 2, 3)
    disc = discretize(a, b, delta)
    with pytest.raises(ShapeError):
        selective_scan(x, disc, Tensor(np.zeros((4, 3))), d)
    with pytest.raises(ShapeError):
        selective_scan(x, disc, c, Tensor(np.zeros(3)))


def test_scan_gradients_match_fd():
    gen = np.random.default_rng(7)
    length, dim, state = 6, 2, 3
    x = Tensor(gen.normal(size=(length, dim)), requires_grad=True)
    a_log = Tensor(gen.normal(size=(dim, state)) * 0.2, requires_grad=True)
    b = Tensor(gen.normal(size=(length, state)), requires_grad=True)
    c = Tensor(gen.normal(size=(length, state)), requires_grad=True)
    delta_raw = Tensor(gen.normal(size=(length, dim)) - 1.0, requires_grad=True)
    d = Tensor(gen.normal(size=(dim,)), requires_grad=True)
    weight = Tensor(gen.normal(size=(length, dim)))

    def loss():
        from pamm.tensor import exp as texp
        a = -texp(a_log)
        disc = discretize(a, b, softplus(delta_raw))
        return sum_(selective_scan(x, disc, c, d) * weight)

    check_grads(loss, [x, a_log, b, c, delta_raw, d])


def test_phi_gradient_near_guard():
    for z0 in (-2e-4, -5e-5, 3e-5, 2e-4):
        z = Tensor([z0], requires_grad=True)
        check_grads(lambda: sum_(phi_zoh(z) * 3.0), [z])


# ---------------------------------------------------------------- mdhs

def fixed_params(dim, state, h, w, gen, zero_dynamics=False, zero_readout=False):
    a = Tensor(-np.exp(gen.normal(size=(dim, state)) * 0.2))
    b_map = Tensor(gen.normal(size=(state, h, w)))
    c_map = Tensor(np.zeros((state, h, w)) if zero_readout
                   else gen.normal(size=(state, h, w)))
    delta_map = Tensor(np.full((dim, h, w), 700.0) if zero_dynamics
                       else np.exp(gen.uniform(-4, -1, size=(dim, h, w))))
    d = Tensor(gen.normal(size=(dim,)))
    return SSMParams(a=a, b_map=b_map, c_map=c_map, delta_map=delta_map, d=d)


def orders_for(h, w):
    return [scan_order(dirn, h, w) for dirn in (1, 2, 3, 4)]


def test_mdhs_skip_only_gives_four_dx():
    # huge delta drives abar ~ 0; zero readout kills the state path entirely
    gen = np.random.default_rng(8)
    dim, state, h, w = 3, 2, 4, 4
    x = Tensor(gen.normal(size=(dim, h, w)))
    params = fixed_params(dim, state, h, w, gen, zero_dynamics=True, zero_readout=True)
    out = mdhs_scan(x, lambda _: params, orders_for(h, w))
    np.testing.assert_allclose(out.data, 4.0 * params.d.data[:, None, None] * x.data,
                               atol=1e-12)


def test_mdhs_single_pixel():
    gen = np.random.default_rng(9)
    dim, state = 2, 3
    x = Tensor(gen.normal(size=(dim, 1, 1)))
    params = fixed_params(dim, state, 1, 1, gen)
    out = mdhs_scan(x, lambda _: params, orders_for(1, 1))
    disc = discretize(params.a,
                      transpose(serialize(params.b_map, scan_order(1, 1, 1))),
                      transpose(serialize(params.delta_map, scan_order(1, 1, 1))))
    cb = np.einsum("ldn,ln->ld", disc.bbar.data,
                   transpose(serialize(params.c_map, scan_order(1, 1, 1))).data)
    expected = 4.0 * (cb[0] + params.d.data) * x.data[:, 0, 0]
    np.testing.assert_allclose(out.data[:, 0, 0], expected, atol=1e-12)


def test_mdhs_matches_composed_single_direction_oracle():
    gen = np.random.default_rng(10)
    dim, state, h, w = 2, 3, 4, 4
    x = Tensor(gen.normal(size=(dim, h, w)))
    params = fixed_params(dim, state, h, w, gen)
    got = mdhs_scan(x, lambda _: params, orders_for(h, w)).data

    total = np.zeros_like(x.data)
    for order in orders_for(h, w):
        xs = transpose(serialize(x, order))
        bs = transpose(serialize(params.b_map, order))
        cs = transpose(serialize(params.c_map, order))
        ds = transpose(serialize(params.delta_map, order))
        disc = discretize(params.a, bs, ds)
        y = selective_scan(xs, disc, cs, params.d)
        total += deserialize(transpose(y), order).data
    np.testing.assert_allclose(got, total, atol=1e-12)


def test_mdhs_direction_permutation_invariant():
    gen = np.random.default_rng(11)
    dim, state, h, w = 2, 2, 4, 4
    x = Tensor(gen.normal(size=(dim, h, w)))
    params = fixed_params(dim, state, h, w, gen)
    base = mdhs_scan(x, lambda _: params, orders_for(h, w)).data
    for perm in itertools.permutations(range(4)):
        partials = []
        for order in orders_for(h, w):
            xs = transpose(serialize(x, order))
            disc = discretize(params.a, transpose(serialize(params.b_map, order)),
                              transpose(serialize(params.delta_map, order)))
            y = selective_scan(xs, disc, transpose(serialize(params.c_map, order)),
                               params.d)
            partials.append(deserialize(transpose(y), order).data)
        summed = partials[perm[0]] + partials[perm[1]] + partials[perm[2]] + partials[perm[3]]
        np.testing.assert_allclose(summed, base, atol=1e-12)


def test_mdhs_shape_validation():
    gen = np.random.default_rng(12)
    x = Tensor(gen.normal(size=(2, 4, 4)))
    params = fixed_params(2, 2, 4, 4, gen)
    with pytest.raises(ShapeError):
        mdhs_scan(x, lambda _: params, [scan_order(1, 3, 3)] * 4)

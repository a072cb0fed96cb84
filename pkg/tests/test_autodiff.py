import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xdnn import autodiff as ad

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


def test_matmul_example():
    out = ad.matmul(ad.tensor([[1.0, 2.0], [3.0, 4.0]]), ad.tensor([1.0, 1.0]))
    np.testing.assert_array_equal(out.data, [3.0, 7.0])


def test_relu_example():
    np.testing.assert_array_equal(ad.relu(ad.tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_avg_pool_example():
    out = ad.avg_pool1d(ad.tensor([[[2.0, 4.0, 6.0, 8.0]]]), 2)
    np.testing.assert_array_equal(out.data, [[[3.0, 7.0]]])


def test_linear_gradient():
    x = ad.tensor([3.0, 5.0], requires_grad=True)
    f = ad.sum(ad.mul(ad.constant([2.0, -1.0]), x))
    (g,) = ad.grad(f, [x])
    np.testing.assert_array_equal(g.data, [2.0, -1.0])


@pytest.mark.parametrize("x0, expected", [(-1.0, 0.0), (2.0, 1.0), (0.0, 0.0)])
def test_relu_gradient_including_kink(x0, expected):
    x = ad.tensor([x0], requires_grad=True)
    (g,) = ad.grad(ad.sum(ad.relu(x)), [x])
    assert g.data[0] == expected


def test_squared_relu_layer_against_finite_differences(rng):
    W = ad.tensor(rng.normal(size=(4, 4)), requires_grad=True)
    x = ad.constant(rng.normal(size=4))
    f = ad.sum(ad.square(ad.relu(ad.matmul(W, x))))
    assert ad.gradient_check(f, W, 1e-5) < 1e-6


def test_gradient_check_three_layer_mlp(rng):
    x = ad.tensor(rng.normal(size=(5, 6)), requires_grad=True)
    h = x
    for n_in, n_out in [(6, 8), (8, 8), (8, 1)]:
        h = ad.relu(ad.matmul(h, ad.constant(rng.normal(size=(n_in, n_out)))))
    assert ad.gradient_check(ad.sum(h), x, 1e-5) < 1e-5


def test_constant_function_has_zero_deviation():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    f = ad.add(ad.sum(ad.mul(x, 0.0)), 3.0)
    assert ad.gradient_check(f, x) == 0.0


UNARY = {
    "exp": ad.exp,
    "log": lambda t: ad.log(ad.add(ad.square(t), 1.0)),
    "square": ad.square,
    "softplus": ad.softplus,
    "log_sigmoid": ad.log_sigmoid,
    "reciprocal": lambda t: ad.reciprocal(ad.add(ad.square(t), 0.5)),
    "abs": ad.abs,
    "leaky_relu": lambda t: ad.leaky_relu(t, 0.1),
    "logsumexp": lambda t: ad.logsumexp(ad.reshape(t, (1, -1)), axis=1),
}


def _away_from_kinks(x):
    return x + np.where(np.abs(x) < 1e-2, 0.05, 0.0)


@pytest.mark.parametrize("name", sorted(UNARY))
@given(x=vec(4))
def test_unary_primitives_match_finite_differences(name, x):
    leaf = ad.tensor(_away_from_kinks(x), requires_grad=True)
    out = ad.sum(UNARY[name](leaf))
    (g,) = ad.grad(out, [leaf])
    dev = ad.gradient_check(out, leaf, 1e-6)
    assert dev <= 1e-5 * max(1.0, np.max(np.abs(g.data)))


BINARY = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "div": lambda a, b: ad.div(a, ad.add(ad.square(b), 1.0)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@given(a=vec(3), b=vec(3))
def test_binary_primitives_match_finite_differences(name, a, b):
    ta = ad.tensor(a, requires_grad=True)
    tb = ad.tensor(b, requires_grad=True)
    out = ad.sum(BINARY[name](ta, tb))
    ga, gb = ad.grad(out, [ta, tb])
    for leaf, g in ((ta, ga), (tb, gb)):
        assert ad.gradient_check(out, leaf, 1e-6) <= 1e-5 * max(1.0, np.max(np.abs(g.data)))


@given(a=arrays(np.float64, (2, 3), elements=finite), b=arrays(np.float64, (3, 2), elements=finite))
def test_matmul_transpose_reshape_gradients(a, b):
    ta = ad.tensor(a, requires_grad=True)
    tb = ad.tensor(b, requires_grad=True)
    out = ad.sum(ad.square(ad.reshape(ad.transpose(ad.matmul(ta, tb)), (4,))))
    for leaf in (ta, tb):
        assert ad.gradient_check(out, leaf, 1e-6) < 1e-4


def test_max_pool_routes_ties_to_first_element():
    x = ad.tensor([[[3.0, 3.0, 1.0, 2.0]]], requires_grad=True)
    (g,) = ad.grad(ad.sum(ad.max_pool1d(x, 2)), [x])
    np.testing.assert_array_equal(g.data, [[[1.0, 0.0, 0.0, 1.0]]])


def test_min_pool_and_gather():
    x = ad.tensor([[[4.0, 1.0, 5.0, 9.0]]], requires_grad=True)
    np.testing.assert_array_equal(ad.min_pool1d(x, 2).data, [[[1.0, 5.0]]])
    picked = ad.gather(ad.tensor([[1.0, 2.0], [3.0, 4.0]]), np.array([1, 0]))
    np.testing.assert_array_equal(picked.data, [2.0, 3.0])


def test_double_backprop_of_cubic():
    x = ad.tensor([2.0, -1.0], requires_grad=True)
    f = ad.sum(ad.mul(ad.square(x), x))
    (g,) = ad.grad(f, [x], order=2)
    np.testing.assert_allclose(g.data, 3 * x.data**2)
    (h,) = ad.grad(ad.sum(g), [x])
    np.testing.assert_allclose(h.data, 6 * x.data)


def test_double_backprop_through_input_gradient_attribution(rng):
    W1 = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    W2 = ad.tensor(rng.normal(size=(4, 1)), requires_grad=True)
    x = ad.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    f = ad.sum(ad.matmul(ad.leaky_relu(ad.matmul(x, W1), 0.2), W2))
    (gx,) = ad.grad(f, [x], order=2)
    score = ad.sum(ad.square(ad.mul(x, gx)))
    for leaf in (W1, W2):
        assert ad.gradient_check(score, leaf, 1e-5) < 1e-6


def test_unconnected_leaf_gets_exact_zero():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    y = ad.tensor([5.0], requires_grad=True)
    (gy,) = ad.grad(ad.sum(ad.square(x)), [y])
    assert np.all(gy.data == 0.0)


def test_forward_is_pure_and_replays_bitwise(rng):
    x = ad.tensor(rng.normal(size=(3, 3)), requires_grad=True)
    out = ad.sum(ad.exp(ad.matmul(x, x)))
    a = ad.forward(out).data
    b = ad.forward(out).data
    assert a.tobytes() == b.tobytes() == out.data.tobytes()
    fed = ad.forward(out, {x: np.zeros((3, 3))})
    assert fed.data == 9.0


def test_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))))
    with pytest.raises(ad.GradientError):
        ad.grad(ad.tensor([1.0, 2.0], requires_grad=True), [ad.tensor(1.0)])
    with pytest.raises(ad.GradientError):
        x = ad.tensor(1.0, requires_grad=True)
        ad.grad(x, [x], order=3)
    with pytest.raises(ValueError):
        ad.tensor([np.nan])


def test_no_grad_stops_recording():
    x = ad.tensor([1.0], requires_grad=True)
    with ad.no_grad():
        assert not ad.is_recording()
        y = ad.square(x)
    assert y.is_leaf
    assert ad.is_recording()

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xdnn import attribution as at
from xdnn import autodiff as ad
from xdnn.axioms import saturating_example
from xdnn.network import Network, NetworkSpec, dense, init_network, mlp_spec, predict


def linear_net(w, bias=None):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    params = {"layers.0.weight": w}
    if bias is not None:
        params["layers.0.bias"] = np.atleast_1d(bias)
    return Network(NetworkSpec((dense(w.shape[1], w.shape[0], bias=bias is not None),), w.shape[1], w.shape[0]), params)


def random_mlp(seed, n_in=5, hidden=(8, 8), bias=False, bias_scale=0.5):
    net = init_network(mlp_spec(n_in, hidden, 1, bias=bias), seed=seed)
    if bias:
        rng = np.random.default_rng(seed + 100)
        net = net.with_params({k: v + rng.normal(0, bias_scale, v.shape) if k.endswith("bias") else v for k, v in net.params.items()})
    return net


def F(net, x):
    return predict(net, np.atleast_2d(x)).data[:, 0]


def square_model(x):
    return ad.square(x)


def product_model(x):
    return ad.mul(ad.take_columns(x, [0]), ad.take_columns(x, [1]))


# -- single-gradient methods ------------------------------------------------------------


def test_gradient_examples():
    lin = linear_net([2.0, -1.0])
    np.testing.assert_array_equal(at.grad_attr(lin, [3.0, 5.0]).values, [2.0, -1.0])
    np.testing.assert_array_equal(at.grad_attr(lin, [-7.0, 0.1]).values, [2.0, -1.0])
    assert at.grad_attr(saturating_example(), [2.0]).values[0] == 0.0
    zero = linear_net([0.0, 0.0])
    np.testing.assert_array_equal(at.grad_attr(zero, [1.0, 2.0]).values, [0.0, 0.0])


def test_input_x_grad_examples():
    lin = linear_net([2.0, -1.0])
    np.testing.assert_array_equal(at.input_x_grad(lin, [3.0, 5.0]).values, [6.0, -5.0])
    assert at.input_x_grad(saturating_example(), [2.0]).values[0] == 0.0
    np.testing.assert_array_equal(at.input_x_grad(random_mlp(0), np.zeros(5)).values, np.zeros(5))


def test_x_gradient_linear_and_completeness():
    lin = linear_net([2.0, -1.0])
    a = at.x_gradient(lin, [3.0, 5.0])
    np.testing.assert_array_equal(a.values, [6.0, -5.0])
    assert a.values.sum() == 1.0 == F(lin, [3.0, 5.0])[0]


def test_x_gradient_refuses_biased_network():
    with pytest.raises(at.NotHomogeneousError, match="strip_bias"):
        at.x_gradient(saturating_example(), [2.0])


def test_x_gradient_matches_fine_ig_oracle(rng):
    net = random_mlp(3, hidden=(8, 8, 8))
    X = rng.normal(size=(10, 5))
    xg = at.x_gradient(net, X).values
    oracle = at.integrated_gradients(net, X, steps=10000, steps_per_call=500).values
    np.testing.assert_allclose(xg, oracle, rtol=1e-3, atol=1e-9)


@given(seed=st.integers(0, 500), alpha=st.floats(0, 20))
def test_x_gradient_properties(seed, alpha):
    net = random_mlp(seed)
    x = np.random.default_rng(seed).normal(size=(4, 5))
    a = at.x_gradient(net, x).values
    np.testing.assert_allclose(a.sum(axis=1), F(net, x), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(at.x_gradient(net, alpha * x).values, alpha * a, rtol=1e-9, atol=1e-12)
    if alpha > 0:
        order = np.argsort(-a, axis=1, kind="stable")
        scaled = at.x_gradient(net, alpha * x).values
        assert np.array_equal(np.argsort(-scaled / alpha, axis=1, kind="stable"), order)


# -- closed form for degree k ----------------------------------------------------------


def test_closed_form_square():
    a = at.closed_form_ig_degree_k(square_model, [3.0], k=2)
    assert a.values[0] == pytest.approx(9.0)
    oracle = at.integrated_gradients(square_model, [3.0], steps=10000).values
    assert a.values[0] == pytest.approx(oracle[0], rel=1e-3)


def test_closed_form_product_splits_equally():
    a = at.closed_form_ig_degree_k(product_model, [2.0, 3.0], k=2)
    np.testing.assert_allclose(a.values, [3.0, 3.0])
    oracle = at.integrated_gradients(product_model, [2.0, 3.0], steps=10000).values
    np.testing.assert_allclose(oracle, [3.0, 3.0], rtol=1e-3)


def test_closed_form_k1_is_x_gradient(rng):
    net = random_mlp(1)
    X = rng.normal(size=(3, 5))
    np.testing.assert_allclose(at.closed_form_ig_degree_k(net, X, k=1).values, at.x_gradient(net, X).values, rtol=1e-12)


def test_closed_form_rejects_wrong_degree():
    with pytest.raises(at.HomogeneityProbeError):
        at.closed_form_ig_degree_k(square_model, [3.0], k=1)
    with pytest.raises(ValueError):
        at.closed_form_ig_degree_k(square_model, [3.0], k=0.5)


# -- Integrated and Expected Gradients ----------------------------------------------------


def test_ig_resolves_saturation():
    a = at.integrated_gradients(saturating_example(), [2.0], steps=128).values
    assert a[0] == pytest.approx(1.0, abs=0.02)


def test_ig_exact_on_linear_models():
    lin = linear_net([[2.0, -1.0, 0.5]], bias=3.0)
    x, b = np.array([1.0, 2.0, -4.0]), np.array([0.5, 0.5, 0.5])
    for steps in (1, 3, 128):
        np.testing.assert_allclose(at.integrated_gradients(lin, x, b, steps=steps).values, [1.0, -1.5, -2.25], rtol=1e-12)


def test_ig_steps_per_call_does_not_change_result(rng):
    net = random_mlp(2, bias=True)
    X = rng.normal(size=(4, 5))
    a = at.integrated_gradients(net, X, steps=64).values
    b = at.integrated_gradients(net, X, steps=64, steps_per_call=16).values
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_ig_convergence_curve_is_monotone(rng):
    net = random_mlp(4, bias=True)
    curve = at.ig_convergence(net, rng.normal(size=(40, 5)), oracle_steps=4000)
    assert curve.is_nonincreasing()
    assert curve.relative[0] > curve.relative[-1]


def test_eg_degenerate_draw_equals_input_x_grad(rng):
    net = random_mlp(5, bias=True)
    X = rng.normal(size=(3, 5))
    eg = at.expected_gradients(net, X, np.zeros((1, 5)), alphas=1.0).values
    np.testing.assert_array_equal(eg, at.input_x_grad(net, X).values)


def test_eg_references_equal_to_input_give_zero(rng):
    net = random_mlp(5, bias=True)
    x = rng.normal(size=5)
    a = at.expected_gradients(net, x, np.tile(x, (4, 1)), seed=0, n_samples=8).values
    np.testing.assert_array_equal(a, np.zeros(5))


def test_eg_is_seed_deterministic_and_reports_stderr(rng):
    net = random_mlp(6, bias=True)
    X, refs = rng.normal(size=(2, 5)), rng.normal(size=(10, 5))
    a = at.expected_gradients(net, X, refs, seed=7, n_samples=32, keep_draws=True)
    b = at.expected_gradients(net, X, refs, seed=7, n_samples=32)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.stderr.shape == (2, 5) and a.stderr_total.shape == (2,)


def test_eg_converges_to_reference_averaged_ig(rng):
    net = random_mlp(8, bias=True)
    x = rng.normal(size=(1, 5))
    refs = rng.normal(size=(6, 5))
    oracle = np.mean([at.integrated_gradients(net, x, r[None], steps=10000, steps_per_call=500).values for r in refs], axis=0)
    errs = []
    for k in (1, 8, 64, 512):
        errs.append(np.mean([np.mean(np.abs(at.expected_gradients(net, x, refs, seed=s, n_samples=k).values - oracle)) for s in range(20)]))
    assert all(b < a for a, b in zip(errs, errs[1:]))


# -- RRR -------------------------------------------------------------------------------------


def test_rrr_examples():
    const = linear_net([[0.0]], bias=np.e)
    assert at.rrr_attr(const, [4.0]).values[0] == 0.0
    assert at.rrr_attr(linear_net([[2.0]]), [3.0]).values[0] == pytest.approx(1 / 3)
    with pytest.raises(ValueError, match="positive"):
        at.rrr_attr(linear_net([[2.0]]), [-3.0])
    assert at.rrr_attr(linear_net([[2.0]]), [-3.0], link="log_prob").values[0] != 0


@given(c=st.floats(0.01, 100))
def test_rrr_is_invariant_to_positive_scaling(c):
    a = at.rrr_attr(linear_net([[2.0, 1.0]]), [3.0, 1.0]).values
    b = at.rrr_attr(linear_net([[2.0 * c, 1.0 * c]]), [3.0, 1.0]).values
    np.testing.assert_allclose(a, b, rtol=1e-12)


# -- comparisons and persistence ------------------------------------------------------------


def test_mean_abs_rel_diff(rng):
    a = rng.normal(size=(4, 3))
    assert at.mean_abs_rel_diff(a, a).value == 0.0
    d = at.mean_abs_rel_diff(np.array([[1.0, 0.0]]), np.array([[1.5, 3.0]]))
    assert d.value == 0.5 and d.skipped == 1 and d.counted == 1


def test_ig_vs_xg_close_on_x_dnn_but_not_for_biased(rng):
    X = rng.normal(size=(100, 5))
    free = random_mlp(9)
    d_free = at.mean_abs_rel_diff(at.integrated_gradients(free, X, steps=128, steps_per_call=32), at.x_gradient(free, X))
    assert d_free.value < 0.02
    biased = random_mlp(9, bias=True)
    d_biased = at.mean_abs_rel_diff(at.integrated_gradients(biased, X, steps=128, steps_per_call=32), at.input_x_grad(biased, X))
    assert d_biased.value > 10 * d_free.value


def test_csv_and_json_round_trip(tmp_path, rng):
    net = random_mlp(0)
    attrs = [at.x_gradient(net, rng.normal(size=5)) for _ in range(3)]
    path = tmp_path / "attr.csv"
    at.attributions_to_csv(attrs, path, ids=[10, 11, 12])
    back = at.attributions_from_csv(path)
    assert len(back) == 3
    for a, b in zip(attrs, back):
        assert b.method == "xg"
        np.testing.assert_array_equal(np.ravel(a.values), np.ravel(b.values))
    doc = json.loads(at.attributions_to_json(attrs))
    assert len(doc) == 3


def test_dispatch():
    lin = linear_net([2.0, -1.0])
    np.testing.assert_array_equal(at.attribute("xg", lin, [3.0, 5.0]).values, [6.0, -5.0])
    with pytest.raises(ValueError):
        at.attribute("lrp", lin, [3.0, 5.0])

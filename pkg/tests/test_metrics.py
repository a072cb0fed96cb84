import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xdnn import metrics as mt
from xdnn.attribution import model_output
from xdnn.data import generate_synthetic
from xdnn.network import Network, NetworkSpec, dense, init_network, mlp_spec
from xdnn.priors import TrainConfig, train


def linear(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return Network(
        NetworkSpec((dense(w.size, 1),), w.size, 1), {"layers.0.weight": w[None, :], "layers.0.bias": np.array([b])}
    )


def negated(net):
    return net.with_params({k: -v if k.startswith(f"layers.{len(net.spec.layers) - 1}.") else v for k, v in net.params.items()})


@pytest.fixture(scope="module")
def trained():
    d = generate_synthetic(seed=2, n_samples=1300, n_features=30, n_informative=6, shift=1.5)
    net = init_network(mlp_spec(30, (16,), 1, bias=False), seed=0)
    net = train(net, d.X[:1000], d.y[:1000], TrainConfig(epochs=25, seed=0)).net
    return net, d.X[1000:], d.y[1000:]


def test_keep_masks_budget_and_tie_break():
    attr = np.array([[0.5, -1.0, 0.5, 2.0]])
    keep = mt.keep_masks(attr, "KPM", [0.0, 0.25, 0.5, 0.75, 1.0])
    assert keep[0].tolist() == [[True, False, True, True]]
    assert keep[2].tolist() == [[True, False, False, True]]  # equal scores: lower index first
    assert keep[3].tolist() == [[False, False, False, True]]
    assert not keep[4].any()
    ram = mt.keep_masks(attr, "RAM", [0.0, 0.25, 0.5])
    assert ram[1].tolist() == [[True, True, True, False]]
    assert ram[2].tolist() == [[True, False, True, False]]


def test_mask_fn_replaces_values():
    X = np.array([[1.0, 2.0], [3.0, 6.0]])
    mask = mt.MaskFn.mean_substitution(X)
    np.testing.assert_array_equal(mask.apply(X, np.zeros_like(X, bool)), [[2.0, 4.0], [2.0, 4.0]])
    np.testing.assert_array_equal(mask.apply(X, np.array([[True, False], [False, True]])), [[1.0, 4.0], [2.0, 6.0]])
    zero = mt.MaskFn.fixed_reference(np.zeros(2))
    np.testing.assert_array_equal(zero.apply(X, np.zeros_like(X, bool)), np.zeros((2, 2)))


def test_bad_fractions_rejected():
    with pytest.raises(ValueError):
        mt.keep_masks(np.ones((1, 3)), "KPM", [0.0, 0.5, 0.4])
    with pytest.raises(ValueError):
        mt.keep_masks(np.ones((1, 3)), "KPM", [0.0, 1.5])
    with pytest.raises(ValueError):
        mt.keep_masks(np.ones((1, 3)), "XYZ", [0.0, 1.0])


@pytest.mark.parametrize("n", [3, 5, 6])
def test_true_contributions_maximise_kpm_over_all_orderings(n):
    """Exhaustive check over every ranking (and the sign patterns it can carry)."""
    rng = np.random.default_rng(n)
    w = rng.normal(size=n)
    X = rng.normal(size=(4, n))
    mask = mt.MaskFn.fixed_reference(rng.normal(size=n))
    net = linear(w, 0.3)
    contrib = w * (X - mask.reference)
    best = mt.evaluate_metric(net, X, contrib, "KPM", mask).auc
    for perm in itertools.permutations(range(n)):
        rank = np.array(perm, dtype=float) + 1.0
        for signs in (np.ones(n), np.sign(contrib[0])):
            alt = np.tile(rank * signs, (X.shape[0], 1))
            assert mt.evaluate_metric(net, X, alt, "KPM", mask).auc <= best + 1e-12


def test_oracle_beats_random_on_linear_model(rng):
    w = rng.normal(size=8)
    X = rng.normal(size=(50, 8))
    mask = mt.MaskFn.mean_substitution(X)
    net = linear(w)
    oracle = w * (X - mask.reference)
    assert mt.evaluate_metric(net, X, oracle, "KPM", mask).auc >= mt.evaluate_metric(
        net, X, mt.random_attribution(X, 0), "KPM", mask
    ).auc


def test_final_point_is_method_independent(rng):
    w = rng.normal(size=6)
    X = rng.normal(size=(20, 6))
    mask = mt.MaskFn.mean_substitution(X)
    net = linear(w)
    for metric in ("KPM", "KNM"):
        ends = {mt.evaluate_metric(net, X, rng.normal(size=X.shape), metric, mask).values[-1] for _ in range(4)}
        assert len(ends) == 1
        assert ends.pop() == pytest.approx(float(np.mean(model_output(net, np.tile(mask.reference, (20, 1))))))


def test_sign_flip_turns_kpm_into_knm(rng):
    net = init_network(mlp_spec(5, (6,), 1, bias=False), seed=1)
    X = rng.normal(size=(30, 5))
    attr = rng.normal(size=X.shape)
    mask = mt.MaskFn.mean_substitution(X)
    kpm = mt.evaluate_metric(net, X, attr, "KPM", mask)
    knm = mt.evaluate_metric(negated(net), X, -attr, "KNM", mask)
    np.testing.assert_allclose(knm.values, -kpm.values, rtol=1e-12, atol=1e-15)


def test_constant_attribution_makes_kpm_and_knm_coincide(rng):
    net = init_network(mlp_spec(5, (6,), 1, bias=False), seed=1)
    X = rng.normal(size=(30, 5))
    mask = mt.MaskFn.mean_substitution(X)
    zero = np.zeros_like(X)
    a = mt.evaluate_metric(net, X, zero, "KPM", mask)
    b = mt.evaluate_metric(net, X, zero, "KNM", mask)
    np.testing.assert_array_equal(a.values, b.values)


def test_kam_starts_at_clean_accuracy_and_is_deterministic(trained):
    net, X, y = trained
    kam = mt.keep_absolute_mask(net, X, y, "xg")
    clean = float(np.mean((model_output(net, X)[:, 0] > 0).astype(int) == y))
    assert kam.values[0] == clean
    again = mt.keep_absolute_mask(net, X, y, "xg")
    assert again.values.tobytes() == kam.values.tobytes()
    r1 = mt.remove_absolute_mask(net, X, y, "random", seed=3)
    r2 = mt.remove_absolute_mask(net, X, y, "random", seed=3)
    assert r1.values.tobytes() == r2.values.tobytes()


def test_trained_network_orderings(trained):
    net, X, y = trained
    table = mt.benchmark_table(net, X, y, methods=("random", "xg", "ig"))
    up = {"KPM": 1, "KNM": -1, "KAM": 1, "RAM": -1}
    for metric, direction in up.items():
        assert direction * (table.auc("xg", metric) - table.auc("random", metric)) > 0, metric
        assert table.auc("ig", metric) == pytest.approx(table.auc("xg", metric), rel=0.01)


def test_x_gradient_row_is_na_for_biased_network(rng, tmp_path):
    net = init_network(mlp_spec(4, (5,), 1, bias=True), seed=0)
    X = rng.normal(size=(20, 4))
    y = rng.integers(0, 2, 20)
    table = mt.benchmark_table(net, X, y, methods=("random", "xg"))
    assert table.results["xg"] is None and "bias" in table.reasons["xg"]
    assert "N/A" in table.text()
    table.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "metric,method,fraction,value"
    assert any(line.endswith("N/A") for line in lines)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=7))
def test_ranking_is_a_stable_descending_permutation(values):
    order = mt.ranking(np.array([values]))[0]
    assert sorted(order.tolist()) == list(range(len(values)))
    expected = sorted(range(len(values)), key=lambda i: (-values[i], i))
    assert order.tolist() == expected

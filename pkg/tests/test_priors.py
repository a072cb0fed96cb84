import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import roc_auc_score

from xdnn import attribution as at
from xdnn import autodiff as ad
from xdnn import priors as pr
from xdnn.data import generate_synthetic
from xdnn.network import init_network, mlp_spec


def gini_oracle(batch):
    """Plain double loop over the batch-mean attribution."""
    batch = np.atleast_2d(batch)
    m = batch.shape[0]
    mean = batch.mean(axis=0)
    num = sum(abs(a - b) for a, b in itertools.product(mean, mean))
    return -num / (m * mean.sum())


def test_gini_uniform_is_zero():
    assert pr.gini_prior(np.ones((4, 6))).data == 0.0


@pytest.mark.parametrize("n, m", [(2, 1), (5, 3), (118, 32)])
def test_gini_one_hot(n, m):
    batch = np.zeros((m, n))
    batch[:, 0] = 1.0
    value = float(pr.gini_prior(batch).data)
    assert value == pytest.approx(-2 * (n - 1) / m, rel=1e-7)
    assert value == pytest.approx(gini_oracle(batch), rel=1e-7)


positive_batches = arrays(np.float64, (3, 5), elements=st.floats(0.01, 10))


@given(batch=positive_batches, c=st.floats(0.01, 100))
def test_gini_scale_invariant_nonpositive_and_matches_oracle(batch, c):
    v = float(pr.gini_prior(batch).data)
    assert v <= 0
    assert float(pr.gini_prior(c * batch).data) == pytest.approx(v, rel=1e-6, abs=1e-12)
    assert v == pytest.approx(gini_oracle(batch), rel=1e-6, abs=1e-12)


def test_gini_coefficient():
    assert pr.gini_coefficient(np.ones(5)) == 0.0
    assert pr.gini_coefficient([0, 0, 0, 1.0]) == pytest.approx(0.75)


def test_roc_auc_examples():
    assert pr.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert pr.roc_auc([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1]) == 1.0
    rng = np.random.default_rng(0)
    assert pr.roc_auc(rng.normal(size=20000), rng.integers(0, 2, 20000)) == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ValueError):
        pr.roc_auc([0.1, 0.2], [1, 1])


@given(
    scores=arrays(np.float64, 30, elements=st.sampled_from([0.0, 0.5, 1.0, 2.0, -1.0])),
    labels=arrays(np.int64, 30, elements=st.integers(0, 1)),
)
def test_roc_auc_matches_pairwise_count_and_sklearn(scores, labels):
    if labels.min() == labels.max():
        return
    pos, neg = scores[labels == 1], scores[labels == 0]
    pairs = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    expected = pairs / (pos.size * neg.size)
    assert pr.roc_auc(scores, labels) == pytest.approx(expected, abs=1e-12)
    assert pr.roc_auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


def tiny_problem(seed=0, n=64, bias=False, hidden=(6,)):
    d = generate_synthetic(seed=seed, n_samples=n, n_features=8, n_informative=3)
    net = init_network(mlp_spec(8, hidden, 1, bias=bias), seed=seed)
    return net, d.X, d.y


def test_prior_config_validation():
    with pytest.raises(ValueError):
        pr.PriorConfig("lrp")
    with pytest.raises(ValueError):
        pr.PriorConfig("xg", lam=-1)
    with pytest.raises(ValueError):
        pr.PriorConfig("xg", kind="zero-attribution-mask")
    net, X, y = tiny_problem(bias=True)
    with pytest.raises(at.NotHomogeneousError):
        pr.train(net, X, y, pr.TrainConfig(epochs=1), pr.PriorConfig("xg"))


def test_batch_attribution_is_the_standalone_code_path():
    net, X, y = tiny_problem()
    leaves = net.parameter_tensors()
    model = net.bind(leaves)
    for method, standalone in [
        ("xg", at.x_gradient(net, X[:8]).values),
        ("grad", at.grad_attr(net, X[:8]).values),
        ("rrr", at.rrr_attr(net, X[:8], link="log_prob").values),
    ]:
        got = pr.batch_attribution(model, X[:8], y[:8], pr.PriorConfig(method), X, None).data
        assert got.tobytes() == np.asarray(standalone).tobytes()
    eg = pr.batch_attribution(model, X[:8], y[:8], pr.PriorConfig("eg", eg_refs=3), X, np.random.default_rng(5)).data
    ref = at.expected_gradients(net, X[:8], X, seed=np.random.default_rng(5), n_samples=3).values
    assert eg.tobytes() == ref.tobytes()


@pytest.mark.parametrize("method", ["xg", "grad", "rrr", "eg"])
def test_objective_gradient_matches_finite_differences(method):
    net, X, y = tiny_problem(bias=method != "xg", hidden=(4,))
    pc = pr.PriorConfig(method, lam=0.7, eg_refs=2)
    tc = pr.TrainConfig()
    leaves = net.parameter_tensors()
    obj = pr.objective(net.bind(leaves), X[:10], y[:10], tc, pc, X, np.random.default_rng(0))
    for leaf in leaves.values():
        assert ad.gradient_check(obj.total, leaf, 1e-5) < 1e-5


def test_trace_decomposes_and_lambda_zero_is_plain_training():
    net, X, y = tiny_problem()
    tc = pr.TrainConfig(epochs=3, batch_size=16, seed=4)
    res = pr.train(net, X, y, tc, pr.PriorConfig("xg", lam=2.5))
    for _, _, total, task, prior in res.trace.steps:
        assert total == pytest.approx(task + 2.5 * prior, rel=1e-12, abs=1e-15)
    plain = pr.train(net, X, y, tc, None)
    zero = pr.train(net, X, y, tc, pr.PriorConfig("xg", lam=0.0))
    for k in plain.net.params:
        assert plain.net.params[k].tobytes() == zero.net.params[k].tobytes()


def test_training_is_deterministic_and_lowers_loss():
    net, X, y = tiny_problem(n=200)
    tc = pr.TrainConfig(epochs=30, seed=1)
    a = pr.train(net, X, y, tc)
    b = pr.train(net, X, y, tc)
    assert all(a.net.params[k].tobytes() == b.net.params[k].tobytes() for k in a.net.params)
    assert a.trace.epochs[-1]["train_loss"] < a.trace.epochs[0]["train_loss"]


def test_sparsity_prior_concentrates_attribution():
    d = generate_synthetic(seed=3, n_samples=400, n_features=20, n_informative=3)
    net = init_network(mlp_spec(20, (16,), 1, bias=False), seed=0)
    tc = pr.TrainConfig(epochs=40, seed=0)
    ginis = []
    for lam in (0.0, 1.0):
        res = pr.train(net, d.X, d.y, tc, pr.PriorConfig("xg", lam=lam))
        ginis.append(pr.gini_coefficient(np.abs(at.x_gradient(res.net, d.X).values).mean(axis=0)))
    assert ginis[1] > ginis[0]


def test_mask_prior_pushes_feature_attribution_down():
    d = generate_synthetic(seed=3, n_samples=300, n_features=10, n_informative=3)
    informative = d.provenance["informative"]
    net = init_network(mlp_spec(10, (8,), 1, bias=False), seed=0)
    tc = pr.TrainConfig(epochs=30, seed=0)
    out = []
    for lam in (0.0, 10.0):
        pc = pr.PriorConfig("xg", kind="zero-attribution-mask", lam=lam, features=informative)
        res = pr.train(net, d.X, d.y, tc, pc)
        out.append(np.abs(at.x_gradient(res.net, d.X).values[:, informative]).mean())
    assert out[1] < out[0]


def test_subsample_experiment_and_summary(tmp_path):
    d = generate_synthetic(seed=0, n_samples=300, n_features=8, n_informative=3)
    arms = [pr.Arm("unreg", None, bias=True), pr.Arm("xg", pr.PriorConfig("xg", lam=0.1))]
    tc = pr.TrainConfig(epochs=3)
    a = pr.subsample_experiment(d.X, d.y, 3, 40, arms, tc, seed=1, hidden=(4,))
    b = pr.subsample_experiment(d.X, d.y, 3, 40, arms, tc, seed=1, hidden=(4,), n_jobs=2)
    assert a.rows == b.rows and len(a.rows) == 6
    agg = a.aggregate()
    assert set(agg) == {"unreg", "xg"} and agg["xg"]["n"] == 3
    a.to_csv(tmp_path / "runs.csv")
    assert (tmp_path / "runs.csv").read_text().startswith("config,repeat,roc_auc")
    with pytest.raises(ValueError):
        pr.subsample_experiment(d.X, d.y, 1, 200, arms, tc)


def _agg(**means):
    return {k: {"mean": v[0], "sem": v[1], "ci2": 2 * v[1], "n": 50, "diverged": 0} for k, v in means.items()}


def test_sparsity_trend_checks():
    good = _agg(
        xg=(0.80, 0.005), grad=(0.70, 0.005), eg1=(0.72, 0.005), eg4=(0.74, 0.005), eg16=(0.73, 0.005),
        eg32=(0.76, 0.005), unreg=(0.70, 0.01), **{"unreg-no-bias": (0.705, 0.01)},
    )
    t = pr.sparsity_trends(good)
    assert all(v["pass"] for v in t.values())
    bad = dict(good, xg={"mean": 0.73, "sem": 0.005, "ci2": 0.01, "n": 50, "diverged": 0})
    assert not pr.sparsity_trends(bad)["xg_beats_grad_and_eg1"]["pass"]
    bad = dict(good, eg16={"mean": 0.6, "sem": 0.005, "ci2": 0.01, "n": 50, "diverged": 0})
    assert not pr.sparsity_trends(bad)["eg_nondecreasing"]["pass"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    net, X, y = tiny_problem()
    X = X * 1e307
    with pytest.raises(pr.TrainingDiverged) as info:
        pr.train(net, X, y, pr.TrainConfig(epochs=2, lr=10.0), pr.PriorConfig("xg", lam=1.0))
    assert info.value.trace.steps

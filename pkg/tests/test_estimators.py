import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from xdnn.data import generate_synthetic
from xdnn.estimators import AttributionTransformer, XDNNClassifier


@pytest.fixture(scope="module")
def data():
    d = generate_synthetic(seed=0, n_samples=400, n_features=12, n_informative=4, shift=1.5)
    return d.X, d.y


def test_classifier_fit_predict(data):
    X, y = data
    clf = XDNNClassifier(hidden=(8,), epochs=20).fit(X[:300], y[:300])
    assert clf.score(X[300:], y[300:]) > 0.6
    proba = clf.predict_proba(X[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(clf.predict(X)) <= set(clf.classes_)


def test_string_and_multiclass_labels(rng):
    X = rng.normal(size=(90, 4))
    y = np.array(["a", "b", "c"])[np.argmax(X[:, :3], axis=1)]
    clf = XDNNClassifier(hidden=(8,), epochs=100, lr=1e-2).fit(X, y)
    assert clf.network_.spec.output_dim == 3
    assert clf.predict_proba(X).shape == (90, 3)
    assert clf.score(X, y) > 0.5


def test_params_clone_and_validation(data):
    X, y = data
    clf = XDNNClassifier(hidden=(4,), lam=0.5, prior_method="xg", epochs=2)
    assert clf.get_params()["lam"] == 0.5
    assert clone(clf).get_params() == clf.get_params()
    with pytest.raises(NotFittedError):
        clf.predict(X)
    clf.fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :3])
    with pytest.raises(ValueError):
        XDNNClassifier().fit(X, np.zeros(len(X)))


def test_attribution_transformer(data):
    X, y = data
    clf = XDNNClassifier(hidden=(8,), epochs=5).fit(X, y)
    xg = AttributionTransformer(clf, method="xg").fit(X).transform(X[:10])
    ig = AttributionTransformer(clf, method="ig", steps=64).fit(X).transform(X[:10])
    assert xg.shape == (10, 12)
    np.testing.assert_allclose(ig, xg, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(xg.sum(axis=1), clf.decision_function(X[:10]), rtol=1e-9)
    eg = AttributionTransformer(clf, method="eg", n_samples=8).fit_transform(X[:10])
    assert eg.shape == (10, 12)


def test_pipeline(data):
    X, y = data
    pipe = make_pipeline(StandardScaler(), XDNNClassifier(hidden=(4,), epochs=3))
    pipe.fit(X, y)
    assert pipe.predict(X).shape == (len(X),)

"""scikit-learn style wrappers around training and attribution."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import attribution as at
from .network import Network, init_network, mlp_spec
from .priors import PriorConfig, TrainConfig, train


class XDNNClassifier(ClassifierMixin, BaseEstimator):
    """ReLU MLP classifier, bias-free by default, with an optional attribution prior.

    Binary problems use a single logit and binary cross-entropy; more classes
    use one logit per class and softmax cross-entropy.
    """

    def __init__(
        self,
        hidden=(32,),
        bias=False,
        prior_method=None,
        lam=0.1,
        eg_refs=1,
        epochs=50,
        batch_size=32,
        lr=1e-3,
        random_state=0,
    ):
        self.hidden = hidden
        self.bias = bias
        self.prior_method = prior_method
        self.lam = lam
        self.eg_refs = eg_refs
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        binary = self.classes_.size == 2
        self.n_features_in_ = X.shape[1]
        spec = mlp_spec(X.shape[1], tuple(self.hidden), 1 if binary else self.classes_.size, bias=self.bias)
        net = init_network(spec, seed=self.random_state)
        tc = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.random_state,
            loss="binary-cross-entropy" if binary else "softmax-cross-entropy",
        )
        pc = None if self.prior_method is None else PriorConfig(self.prior_method, lam=self.lam, eg_refs=self.eg_refs)
        result = train(net, X, y_idx, tc, pc)
        self.network_ = result.net
        self.trace_ = result.trace
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = at.model_output(self.network_, X)
        return out[:, 0] if out.shape[1] == 1 else out

    def predict_proba(self, X):
        z = self.decision_function(X)
        if z.ndim == 1:
            p = 1.0 / (1.0 + np.exp(-z))
            return np.column_stack([1 - p, p])
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self.decision_function(X)
        idx = (z > 0).astype(int) if z.ndim == 1 else np.argmax(z, axis=1)
        return self.classes_[idx]


class AttributionTransformer(TransformerMixin, BaseEstimator):
    """Maps inputs to their attributions under a fitted model.

    ``model`` is a fitted ``XDNNClassifier`` or a ``Network``. ``target``
    defaults to the single logit (binary) or the predicted class.
    """

    def __init__(self, model=None, method="xg", steps=at.DEFAULT_IG_STEPS, n_samples=128, target=None, random_state=0):
        self.model = model
        self.method = method
        self.steps = steps
        self.n_samples = n_samples
        self.target = target
        self.random_state = random_state

    def _network(self):
        if isinstance(self.model, Network):
            return self.model
        if self.model is None:
            raise ValueError("AttributionTransformer needs a model")
        check_is_fitted(self.model, "network_")
        return self.model.network_

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        net = self._network()
        if X.shape[1] != net.spec.input_dim:
            raise ValueError(f"X has {X.shape[1]} features, network expects {net.spec.input_dim}")
        self.network_ = net
        self.references_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        target = self.target
        if target is None:
            out = at.model_output(self.network_, X)
            target = np.zeros(X.shape[0], dtype=int) if out.shape[1] == 1 else np.argmax(out, axis=1)
        if self.method == "ig":
            return at.integrated_gradients(self.network_, X, None, steps=self.steps, target=target).values
        if self.method == "eg":
            return at.expected_gradients(
                self.network_, X, self.references_, seed=self.random_state, n_samples=self.n_samples, target=target
            ).values
        return at.attribute(self.method, self.network_, X, target).values

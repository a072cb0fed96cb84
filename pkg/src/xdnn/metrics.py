"""Masking benchmarks for attribution quality.

Features are progressively replaced by a mask value in the order an
attribution ranks them, and the model's response is tracked:

* KPM keeps the most positive features (mean target logit, higher is better)
* KNM keeps the most negative features (mean target logit, lower is better)
* KAM keeps the largest ``|a|`` features (accuracy, higher is better)
* RAM removes the largest ``|a|`` features first (accuracy, lower is better)

At masked fraction ``f`` the keep budget is ``n - round(f * n)`` features;
KPM/KNM never keep features of the wrong sign. Ties in the ranking go to the
lower feature index. Each curve is summarised by its trapezoidal area.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import attribution as at
from .network import classify_homogeneity

METRICS = ("KPM", "KNM", "KAM", "RAM")
HIGHER_IS_BETTER = {"KPM": True, "KNM": False, "KAM": True, "RAM": False}
DEFAULT_FRACTIONS = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


@dataclass(frozen=True)
class MaskFn:
    """Replacement values used for masked features."""

    kind: str
    reference: np.ndarray = field(repr=False)
    description: str = ""

    @classmethod
    def mean_substitution(cls, X) -> "MaskFn":
        X = np.asarray(X, dtype=np.float64)
        return cls("mean-substitution", X.mean(axis=0), "feature replaced by its dataset mean")

    @classmethod
    def fixed_reference(cls, reference) -> "MaskFn":
        ref = np.asarray(reference, dtype=np.float64)
        return cls("fixed-reference", ref, "feature replaced by a fixed reference value")

    def apply(self, X: np.ndarray, keep: np.ndarray) -> np.ndarray:
        """Keep entries where ``keep`` is true, replace the rest."""
        return np.where(keep, X, np.broadcast_to(self.reference, X.shape))


@dataclass
class MetricResult:
    metric: str
    method: str
    fractions: np.ndarray
    values: np.ndarray

    @property
    def curve(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.values.tolist()))

    @property
    def auc(self) -> float:
        return float(np.trapezoid(self.values, self.fractions))


def _check_fractions(fractions) -> np.ndarray:
    f = np.asarray(fractions, dtype=np.float64)
    if f.ndim != 1 or f.size < 2:
        raise ValueError("need at least two masking fractions")
    if np.any(f < 0) or np.any(f > 1) or np.any(np.diff(f) <= 0):
        raise ValueError("fractions must be strictly increasing within [0, 1]")
    return f


def ranking(scores: np.ndarray) -> np.ndarray:
    """Per row, feature indices from highest to lowest score; ties by index."""
    scores = np.atleast_2d(scores)
    idx = np.broadcast_to(np.arange(scores.shape[1]), scores.shape)
    return np.lexsort((idx, -scores), axis=-1)


def keep_masks(attr: np.ndarray, metric: str, fractions) -> np.ndarray:
    """Boolean ``[fractions, N, n]`` array: which features stay unmasked."""
    attr = np.atleast_2d(np.asarray(attr, dtype=np.float64))
    fractions = _check_fractions(fractions)
    N, n = attr.shape
    if metric == "KPM":
        key, eligible = attr, attr > 0
    elif metric == "KNM":
        key, eligible = -attr, attr < 0
    elif metric in ("KAM", "RAM"):
        key, eligible = np.abs(attr), np.ones_like(attr, dtype=bool)
    else:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    order = ranking(key)
    position = np.empty_like(order)
    np.put_along_axis(position, order, np.arange(n)[None, :].repeat(N, 0), axis=1)
    out = np.empty((fractions.size, N, n), dtype=bool)
    for k, f in enumerate(fractions):
        n_masked = int(round(f * n))
        if metric == "RAM":
            out[k] = position >= n_masked
        else:
            out[k] = (position < n - n_masked) & eligible
    return out


def _targets(net, X: np.ndarray, target) -> np.ndarray:
    if target is not None:
        return np.broadcast_to(np.asarray(target), (X.shape[0],)).astype(np.intp)
    logits = at.model_output(net, X)
    if logits.shape[1] == 1:
        return np.zeros(X.shape[0], dtype=np.intp)
    return np.argmax(logits, axis=1)


def _accuracy(logits: np.ndarray, y: np.ndarray) -> float:
    pred = (logits[:, 0] > 0).astype(int) if logits.shape[1] == 1 else np.argmax(logits, axis=1)
    return float(np.mean(pred == y))


def evaluate_metric(
    net,
    X,
    attr,
    metric: str,
    mask: MaskFn,
    fractions=DEFAULT_FRACTIONS,
    y=None,
    target=None,
    method: str = "",
) -> MetricResult:
    """One masking curve for precomputed attributions ``attr`` (same shape as ``X``).

    The explained output is ``target`` when given, the predicted class for
    multi-output networks, or the single logit otherwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    attr = np.atleast_2d(np.asarray(attr, dtype=np.float64))
    if attr.shape != X.shape:
        raise ValueError(f"attribution shape {attr.shape} does not match inputs {X.shape}")
    fractions = _check_fractions(fractions)
    if metric in ("KAM", "RAM") and y is None:
        raise ValueError(f"{metric} measures accuracy and needs labels")
    tgt = _targets(net, X, target)
    keep = keep_masks(attr, metric, fractions)
    values = []
    for k in range(fractions.size):
        logits = at.model_output(net, mask.apply(X, keep[k]))
        if metric in ("KPM", "KNM"):
            values.append(float(np.mean(logits[np.arange(X.shape[0]), tgt])))
        else:
            values.append(_accuracy(logits, np.asarray(y)))
    return MetricResult(metric, method, fractions, np.array(values))


# -- attribution providers ------------------------------------------------------------


class NotApplicable(Exception):
    """The attribution method cannot be used with this network."""


def random_attribution(X, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=np.shape(X))


def compute_attributions(method: str, net, X, target=None, seed: int = 0, references=None, ig_steps: int = 128, eg_samples: int = 128) -> np.ndarray:
    """Attributions of ``X`` for a named method; raises ``NotApplicable`` for X-Gradient on biased nets."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    tgt = _targets(net, X, target)
    if method == "random":
        return random_attribution(X, seed)
    if method == "xg":
        report = classify_homogeneity(net)
        if not report.homogeneous:
            raise NotApplicable("; ".join(report.reasons))
        return at.x_gradient(net, X, tgt).values
    if method == "ig":
        return at.integrated_gradients(net, X, None, steps=ig_steps, target=tgt, steps_per_call=16).values
    if method == "grad":
        return at.grad_attr(net, X, tgt).values
    if method == "input_x_grad":
        return at.input_x_grad(net, X, tgt).values
    if method.startswith("eg"):
        k = int(method[2:]) if method[2:] else eg_samples
        refs = X if references is None else references
        return at.expected_gradients(net, X, refs, seed=seed, n_samples=k, target=tgt).values
    raise ValueError(f"unknown attribution method {method!r}")


def keep_positive_mask(net, X, method, mask=None, fractions=DEFAULT_FRACTIONS, target=None, seed: int = 0) -> MetricResult:
    return _metric_for_method("KPM", net, X, None, method, mask, fractions, target, seed)


def keep_negative_mask(net, X, method, mask=None, fractions=DEFAULT_FRACTIONS, target=None, seed: int = 0) -> MetricResult:
    return _metric_for_method("KNM", net, X, None, method, mask, fractions, target, seed)


def keep_absolute_mask(net, X, y, method, mask=None, fractions=DEFAULT_FRACTIONS, target=None, seed: int = 0) -> MetricResult:
    return _metric_for_method("KAM", net, X, y, method, mask, fractions, target, seed)


def remove_absolute_mask(net, X, y, method, mask=None, fractions=DEFAULT_FRACTIONS, target=None, seed: int = 0) -> MetricResult:
    return _metric_for_method("RAM", net, X, y, method, mask, fractions, target, seed)


def _metric_for_method(metric, net, X, y, method, mask, fractions, target, seed) -> MetricResult:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mask = mask or MaskFn.mean_substitution(X)
    if callable(method):
        attr, name = np.asarray(method(net, X)), getattr(method, "__name__", "custom")
    elif isinstance(method, np.ndarray):
        attr, name = method, "given"
    else:
        attr, name = compute_attributions(method, net, X, target, seed), method
    return evaluate_metric(net, X, attr, metric, mask, fractions, y, target, name)


# -- table ----------------------------------------------------------------------------


@dataclass
class BenchmarkTable:
    results: dict  # method -> {metric: MetricResult} or None when not applicable
    reasons: dict = field(default_factory=dict)

    def auc(self, method: str, metric: str) -> float | None:
        row = self.results.get(method)
        return None if row is None else row[metric].auc

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "method", "fraction", "value"])
            for method, row in self.results.items():
                if row is None:
                    for metric in METRICS:
                        writer.writerow([metric, method, "", "N/A"])
                    continue
                for metric in METRICS:
                    r = row[metric]
                    for f, v in r.curve:
                        writer.writerow([metric, method, repr(f), repr(v)])

    def text(self) -> str:
        header = ["method"] + [f"{m} {'(up)' if HIGHER_IS_BETTER[m] else '(down)'}" for m in METRICS]
        rows = [header]
        for method, row in self.results.items():
            if row is None:
                rows.append([method] + ["N/A"] * len(METRICS))
            else:
                rows.append([method] + [f"{row[m].auc:.4f}" for m in METRICS])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines)


def benchmark_table(
    net,
    X,
    y,
    methods: Sequence[str] = ("random", "grad", "input_x_grad", "eg1", "ig", "xg"),
    fractions=DEFAULT_FRACTIONS,
    mask: MaskFn | None = None,
    target=None,
    seed: int = 0,
) -> BenchmarkTable:
    """All four metrics for every method; inapplicable methods get an N/A row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mask = mask or MaskFn.mean_substitution(X)
    results, reasons = {}, {}
    for method in methods:
        try:
            attr = compute_attributions(method, net, X, target, seed)
        except NotApplicable as exc:
            results[method] = None
            reasons[method] = str(exc)
            continue
        results[method] = {
            m: evaluate_metric(net, X, attr, m, mask, fractions, y, target, method) for m in METRICS
        }
    return BenchmarkTable(results, reasons)

"""Gradient-based feature attribution.

Every method takes a model (a ``Network``, a ``BoundNetwork`` or any callable
mapping a ``[batch, n]`` tensor to ``[batch, outputs]`` logits), inputs of
shape ``[n]`` or ``[batch, n]`` and a target logit index (an int, or one
index per row). Results come back as ``Attribution`` records whose values
have the input's shape.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import classify_homogeneity

ZERO_BASELINE = "zero"

DEFAULT_IG_STEPS = 128
RRR_EPS = 1e-6
REL_DIFF_EPS = 1e-12


class NotHomogeneousError(ValueError):
    """Raised when X-Gradient is requested for a network with bias terms."""

    def __init__(self, reasons: Sequence[str]):
        self.reasons = tuple(reasons)
        super().__init__(
            "X-Gradient is only defined for nonnegatively homogeneous networks; "
            + "; ".join(self.reasons)
            + " (use strip_bias to obtain one)"
        )


class HomogeneityProbeError(ValueError):
    """Raised when a model fails the dynamic degree-k homogeneity probe."""


@dataclass
class Attribution:
    """Per-feature contributions for one or more inputs.

    ``baseline`` is ``"zero"`` for the zero baseline, an array otherwise, or
    ``None`` for methods without a baseline. ``graph`` holds the values as a
    differentiable tensor when the attribution was built with
    ``create_graph=True``. ``draws`` keeps the per-sample contributions of
    sampling methods when requested.
    """

    values: np.ndarray
    method: str
    target: object = 0
    baseline: object = None
    steps: int = 1
    graph: Tensor | None = field(default=None, repr=False)
    draws: np.ndarray | None = field(default=None, repr=False)

    @property
    def stderr(self) -> np.ndarray | None:
        """Monte-Carlo standard error per value (sampling methods with >1 draw)."""
        if self.draws is None or self.draws.shape[0] < 2:
            return None
        return self.draws.std(axis=0, ddof=1) / np.sqrt(self.draws.shape[0])

    @property
    def stderr_total(self) -> np.ndarray | None:
        """Standard error of the per-input sum of attributions."""
        if self.draws is None or self.draws.shape[0] < 2:
            return None
        totals = self.draws.sum(axis=-1)
        return totals.std(axis=0, ddof=1) / np.sqrt(self.draws.shape[0])


# -- helpers ----------------------------------------------------------------


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ad.ShapeError("attribution", f"inputs must be [n] or [batch, n], got {arr.shape}")
    return arr, False


def _unbatch(values: np.ndarray, single: bool) -> np.ndarray:
    return values[0] if single else values


def _target_index(target, batch: int, n_outputs: int) -> np.ndarray:
    idx = np.broadcast_to(np.asarray(target), (batch,)).astype(np.intp)
    if np.any(idx < 0) or np.any(idx >= n_outputs):
        raise IndexError(f"target index out of range for {n_outputs} outputs: {np.unique(idx)}")
    return idx


def select_target(out: Tensor, target) -> Tensor:
    """``[batch]`` tensor of the chosen logit per row."""
    if out.ndim == 1:
        out = ad.reshape(out, (1, out.shape[0]))
    idx = _target_index(target, out.shape[0], out.shape[1])
    return ad.reshape(ad.gather(out, idx[:, None]), (out.shape[0],))


def model_output(model: Callable, x, target=None) -> np.ndarray:
    """Numeric logits (or the selected target logit) without recording a tape."""
    X, single = _as_batch(x)
    with ad.no_grad():
        out = model(ad.constant(X))
        if target is not None:
            out = select_target(out, target)
    return _unbatch(out.data, single)


def input_gradient(model: Callable, X: np.ndarray, target, order: int = 1, transform=None) -> tuple[Tensor, Tensor]:
    """Gradient of the summed target logits w.r.t. a batch of inputs.

    Rows do not interact in the supported layers, so row ``b`` of the result
    is the gradient of sample ``b``'s own output. Returns ``(leaf, gradient)``.
    ``transform`` optionally maps the ``[batch]`` selected logits first.
    """
    leaf = ad.tensor(X, requires_grad=True)
    selected = select_target(model(leaf), target)
    if transform is not None:
        selected = transform(selected)
    (g,) = ad.grad(ad.sum(selected), [leaf], order=order)
    return leaf, g


def _finish(values: Tensor, single: bool, method: str, target, baseline, steps: int, create_graph: bool, draws=None):
    data = _unbatch(values.data, single)
    graph = values if create_graph else None
    return Attribution(np.array(data), method, target, baseline, steps, graph, draws)


# -- single-gradient methods --------------------------------------------------


def grad_attr(model, x, target=0, create_graph: bool = False) -> Attribution:
    """Plain input gradient of the target logit."""
    X, single = _as_batch(x)
    _, g = input_gradient(model, X, target, order=2 if create_graph else 1)
    return _finish(g, single, "grad", target, None, 1, create_graph)


def input_x_grad(model, x, target=0, create_graph: bool = False) -> Attribution:
    """Input times gradient, for any model."""
    X, single = _as_batch(x)
    _, g = input_gradient(model, X, target, order=2 if create_graph else 1)
    return _finish(ad.mul(ad.constant(X), g), single, "input_x_grad", target, ZERO_BASELINE, 1, create_graph)


def x_gradient(model, x, target=0, create_graph: bool = False) -> Attribution:
    """Exact zero-baseline Integrated Gradients of a homogeneous network.

    Refuses models that are not structurally homogeneous. With
    ``create_graph=True`` the result stays differentiable w.r.t. the model
    parameters.
    """
    report = classify_homogeneity(model)
    if not report.homogeneous:
        raise NotHomogeneousError(report.reasons)
    X, single = _as_batch(x)
    _, g = input_gradient(model, X, target, order=2 if create_graph else 1)
    return _finish(ad.mul(ad.constant(X), g), single, "xg", target, ZERO_BASELINE, 1, create_graph)


def _probe_alphas(n: int = 8, seed: int = 0) -> np.ndarray:
    return np.exp(np.random.default_rng(seed).uniform(np.log(0.1), np.log(10.0), size=n))


def check_degree_k(model, X: np.ndarray, target, k: float, rtol: float = 1e-6, alphas=None) -> None:
    """Raise ``HomogeneityProbeError`` unless ``F(a x) == a**k F(x)`` at sampled ``a``."""
    alphas = _probe_alphas() if alphas is None else np.asarray(alphas)
    base = model_output(model, X, target)
    for a in alphas:
        scaled = model_output(model, a * X, target)
        expected = a**k * base
        err = np.abs(scaled - expected)
        tol = rtol * np.maximum(np.abs(expected), 1e-12)
        if np.any(err > tol):
            worst = float(np.max(err / np.maximum(np.abs(expected), 1e-12)))
            raise HomogeneityProbeError(
                f"model is not positively homogeneous of degree {k}: relative error {worst:.3g} at alpha={a:.4g}"
            )


def closed_form_ig_degree_k(model, x, target=0, k: float = 1.0, create_graph: bool = False) -> Attribution:
    """Zero-baseline Integrated Gradients of a degree-``k`` homogeneous model.

    Equals ``x * grad / k``. The homogeneity assumption is probed at 8 scale
    factors before computing.
    """
    if k < 1:
        raise ValueError("degree k must be >= 1")
    X, single = _as_batch(x)
    check_degree_k(model, X, target, k)
    _, g = input_gradient(model, X, target, order=2 if create_graph else 1)
    values = ad.scale(ad.mul(ad.constant(X), g), 1.0 / k)
    return _finish(values, single, f"closed_form_ig_k{k:g}", target, ZERO_BASELINE, 1, create_graph)


def rrr_attr(model, x, target=0, eps: float | None = None, link: str = "logit", create_graph: bool = False) -> Attribution:
    """Input gradient of the log of the target output.

    ``link="logit"`` differentiates ``log(F)`` (or ``log(F + eps)`` when
    ``eps`` is given) and needs positive outputs; ``link="log_prob"``
    differentiates the log class probability (log-sigmoid for one output,
    log-softmax otherwise), which is defined for any logits.
    """
    X, single = _as_batch(x)
    if link == "logit":
        shift = 0.0 if eps is None else float(eps)
        out = model_output(model, X, target)
        if np.any(out + shift <= 0):
            raise ValueError(
                "rrr_attr needs positive target logits; pass eps (e.g. 1e-6) for the stabilized "
                "log(F + eps) form, or link='log_prob'"
            )
        _, g = input_gradient(
            model, X, target, order=2 if create_graph else 1, transform=lambda f: ad.log(ad.add(f, shift))
        )
    elif link == "log_prob":
        leaf = ad.tensor(X, requires_grad=True)
        out = model(leaf)
        if out.shape[1] == 1:
            logp = ad.log_sigmoid(select_target(out, 0))
        else:
            logp = ad.sub(select_target(out, target), ad.logsumexp(out, axis=1))
        (g,) = ad.grad(ad.sum(logp), [leaf], order=2 if create_graph else 1)
    else:
        raise ValueError(f"unknown link {link!r}")
    return _finish(g, single, "rrr", target, None, 1, create_graph)


# -- path methods -------------------------------------------------------------


def _baseline_array(baseline, X: np.ndarray) -> np.ndarray:
    if baseline is None or (isinstance(baseline, str) and baseline == ZERO_BASELINE):
        return np.zeros_like(X)
    b = baseline.data if isinstance(baseline, Tensor) else np.asarray(baseline, dtype=np.float64)
    try:
        return np.broadcast_to(b, X.shape).astype(np.float64)
    except ValueError:
        raise ad.ShapeError("integrated_gradients", f"baseline shape {b.shape} does not match inputs {X.shape}") from None


def integrated_gradients(
    model,
    x,
    baseline=None,
    steps: int = DEFAULT_IG_STEPS,
    target=0,
    steps_per_call: int = 1,
) -> Attribution:
    """Straight-line Integrated Gradients with the midpoint Riemann rule.

    Each quadrature node costs one gradient evaluation over the input batch;
    ``steps_per_call`` stacks several nodes into one evaluation to trade
    memory for speed.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X, single = _as_batch(x)
    B = _baseline_array(baseline, X)
    diff = X - B
    batch, n = X.shape
    tgt = np.broadcast_to(np.asarray(target), (batch,))
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(X)
    chunk = max(1, int(steps_per_call))
    for start in range(0, steps, chunk):
        a = alphas[start : start + chunk]
        points = (B[None, :, :] + a[:, None, None] * diff[None, :, :]).reshape(-1, n)
        _, g = input_gradient(model, points, np.tile(tgt, len(a)))
        total += g.data.reshape(len(a), batch, n).sum(axis=0)
    values = diff * total / steps
    stored = ZERO_BASELINE if baseline is None else _unbatch(B, single)
    return Attribution(_unbatch(values, single), "ig", target, stored, steps)


def expected_gradients(
    model,
    x,
    references,
    seed=None,
    n_samples: int | None = None,
    target=0,
    alphas=None,
    create_graph: bool = False,
    keep_draws: bool = False,
) -> Attribution:
    """Sampled path attribution over a reference distribution.

    Without ``n_samples`` every reference is used once per input; otherwise
    ``n_samples`` references are drawn uniformly with replacement. Each draw
    gets its own interpolation point ``alpha ~ U(0, 1)`` (or the supplied
    ``alphas``, broadcast to ``[draws, batch]``).
    """
    X, single = _as_batch(x)
    refs = references.data if isinstance(references, Tensor) else np.asarray(
        [r.data if isinstance(r, Tensor) else r for r in references], dtype=np.float64
    ) if not isinstance(references, np.ndarray) else references.astype(np.float64)
    if refs.ndim == 1:
        refs = refs[None, :]
    if refs.shape[0] == 0:
        raise ValueError("expected_gradients needs at least one reference")
    if refs.shape[1] != X.shape[1]:
        raise ad.ShapeError("expected_gradients", f"references have width {refs.shape[1]}, inputs {X.shape[1]}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch, n = X.shape
    if n_samples is None:
        k = refs.shape[0]
        idx = np.broadcast_to(np.arange(k)[:, None], (k, batch))
    else:
        k = int(n_samples)
        if k < 1:
            raise ValueError("n_samples must be >= 1")
        idx = rng.integers(0, refs.shape[0], size=(k, batch))
    a = rng.uniform(0.0, 1.0, size=(k, batch)) if alphas is None else np.broadcast_to(np.asarray(alphas, float), (k, batch))
    R = refs[idx]  # [k, batch, n]
    diff = X[None, :, :] - R
    points = (R + a[:, :, None] * diff).reshape(k * batch, n)
    tgt = np.tile(np.broadcast_to(np.asarray(target), (batch,)), k)
    _, g = input_gradient(model, points, tgt, order=2 if create_graph else 1)
    contrib = ad.mul(ad.constant(diff.reshape(k * batch, n)), g)
    values = ad.scale(ad.sum(ad.reshape(contrib, (k, batch, n)), axis=0), 1.0 / k)
    draws = contrib.data.reshape(k, batch, n) if keep_draws else None
    if draws is not None and single:
        draws = draws[:, 0, :]
    return _finish(values, single, "eg", target, "references", k, create_graph, draws)


# -- dispatch -----------------------------------------------------------------

METHODS = {
    "grad": grad_attr,
    "input_x_grad": input_x_grad,
    "xg": x_gradient,
    "ig": integrated_gradients,
    "eg": expected_gradients,
    "rrr": rrr_attr,
}


def attribute(method: str, model, x, target=0, **options) -> Attribution:
    """Dispatch to an attribution method by name."""
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown attribution method {method!r}; choose from {sorted(METHODS)}") from None
    return fn(model, x, target=target, **options)


# -- comparison -----------------------------------------------------------------


def _stack_values(attrs) -> np.ndarray:
    if isinstance(attrs, Attribution):
        attrs = [attrs]
    if isinstance(attrs, np.ndarray):
        return np.atleast_2d(attrs)
    rows = [np.atleast_2d(a.values if isinstance(a, Attribution) else np.asarray(a, dtype=np.float64)) for a in attrs]
    return np.concatenate(rows, axis=0)


@dataclass(frozen=True)
class RelativeDifference:
    value: float
    skipped: int
    counted: int

    def __float__(self) -> float:
        return self.value


def mean_abs_rel_diff(reference, other, eps: float = REL_DIFF_EPS) -> RelativeDifference:
    """Mean of ``|ref_i - other_i| / |ref_i|`` over all inputs and features.

    ``reference`` plays the Integrated-Gradients role. Terms whose reference
    magnitude is below ``eps`` are left out and reported in ``skipped``.
    """
    ref = _stack_values(reference)
    oth = _stack_values(other)
    if ref.shape != oth.shape:
        raise ad.ShapeError("mean_abs_rel_diff", f"attribution sets differ in shape: {ref.shape} vs {oth.shape}")
    mask = np.abs(ref) >= eps
    counted = int(mask.sum())
    if counted == 0:
        return RelativeDifference(0.0, int(ref.size), 0)
    value = float(np.mean(np.abs(ref[mask] - oth[mask]) / np.abs(ref[mask])))
    return RelativeDifference(value, int(ref.size - counted), counted)


CONVERGENCE_STEPS = tuple(2**i for i in range(9))
ORACLE_STEPS = 10000


@dataclass
class ConvergenceCurve:
    """Mean absolute difference of IG at each step count to a fine-grid oracle.

    ``scale`` is the mean ``|oracle|`` entry; ``relative`` divides by it.
    """

    steps: tuple
    mean_abs_diff: np.ndarray
    scale: float
    oracle_steps: int

    @property
    def relative(self) -> np.ndarray:
        return self.mean_abs_diff / self.scale if self.scale > 0 else self.mean_abs_diff

    def is_nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.mean_abs_diff) <= 0))

    def at(self, steps: int) -> float:
        return float(self.mean_abs_diff[list(self.steps).index(steps)])

    def rows(self) -> list[tuple]:
        return [(s, float(d), float(r)) for s, d, r in zip(self.steps, self.mean_abs_diff, self.relative)]


def ig_convergence(model, X, baseline=None, target=0, steps=CONVERGENCE_STEPS, oracle_steps: int = ORACLE_STEPS) -> ConvergenceCurve:
    """Sweep IG step counts against an ``oracle_steps`` midpoint oracle."""
    X, _ = _as_batch(X)
    chunk = 64
    oracle = integrated_gradients(model, X, baseline, steps=oracle_steps, target=target, steps_per_call=chunk).values
    diffs = []
    for s in steps:
        approx = integrated_gradients(model, X, baseline, steps=s, target=target, steps_per_call=chunk).values
        diffs.append(float(np.mean(np.abs(approx - oracle))))
    return ConvergenceCurve(tuple(int(s) for s in steps), np.array(diffs), float(np.mean(np.abs(oracle))), oracle_steps)


# -- persistence ----------------------------------------------------------------


def _rows(attrs) -> list[tuple]:
    if isinstance(attrs, Attribution):
        attrs = [attrs]
    rows = []
    for a in attrs:
        vals = np.atleast_2d(a.values)
        tgt = np.broadcast_to(np.asarray(a.target), (vals.shape[0],))
        for v, t in zip(vals, tgt):
            rows.append((a.method, int(t), v))
    return rows


def attributions_to_csv(attrs, path, ids: Sequence | None = None) -> None:
    """One row per input: id, method, target, then one column per feature."""
    rows = _rows(attrs)
    n = len(rows[0][2]) if rows else 0
    ids = list(range(len(rows))) if ids is None else list(ids)
    if len(ids) != len(rows):
        raise ValueError("ids must match the number of attributed inputs")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input_id", "method", "target"] + [f"f{i}" for i in range(n)])
        for rid, (method, t, v) in zip(ids, rows):
            writer.writerow([rid, method, t] + [repr(float(e)) for e in v])


def attributions_from_csv(path) -> list[Attribution]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.append(Attribution(np.array([float(e) for e in row[3:]]), row[1], int(row[2])))
    return out


def attributions_to_json(attrs, path=None) -> str:
    payload = [
        {"input_id": i, "method": method, "target": t, "values": [float(e) for e in v]}
        for i, (method, t, v) in enumerate(_rows(attrs))
    ]
    text = json.dumps(payload, indent=1)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text

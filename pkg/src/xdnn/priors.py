"""Training with attribution priors.

The objective is ``task_loss + lam * prior(attributions)``, where the
attributions of each mini-batch are recomputed inside the differentiated
graph, so the parameter gradient runs through a gradient (double backprop).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import attribution as at
from . import autodiff as ad
from .autodiff import Tensor
from .network import Network, classify_homogeneity, init_network, mlp_spec, strip_bias

ATTRIBUTION_METHODS = ("grad", "rrr", "eg", "xg")
PRIOR_KINDS = ("sparsity-gini", "zero-attribution-mask")
LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
GINI_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """The objective became non-finite; ``trace`` holds everything recorded so far."""

    def __init__(self, message: str, trace: "TrainTrace"):
        self.trace = trace
        super().__init__(message)


@dataclass(frozen=True)
class PriorConfig:
    """Which attribution feeds the prior, which prior, and how strongly.

    ``absolute`` feeds ``|a|`` to the Gini prior (the default); with
    ``absolute=False`` signed attributions enter, which makes the
    denominator's sign data dependent. ``features`` lists the columns whose attribution the
    zero-attribution-mask prior pushes to zero.
    """

    method: str = "xg"
    kind: str = "sparsity-gini"
    lam: float = 1.0
    eg_refs: int = 1
    absolute: bool = True
    features: tuple = ()

    def __post_init__(self):
        if self.method not in ATTRIBUTION_METHODS:
            raise ValueError(f"unknown attribution method {self.method!r}; choose from {ATTRIBUTION_METHODS}")
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior {self.kind!r}; choose from {PRIOR_KINDS}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be a finite nonnegative number")
        if self.eg_refs < 1:
            raise ValueError("eg_refs must be positive")
        if self.kind == "zero-attribution-mask" and not self.features:
            raise ValueError("the zero-attribution-mask prior needs a feature set")
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))

    def check_network(self, net) -> None:
        if self.method == "xg":
            report = classify_homogeneity(net)
            if not report.homogeneous:
                raise at.NotHomogeneousError(report.reasons)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    loss: str = "binary-cross-entropy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("binary-cross-entropy", "softmax-cross-entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))


# -- priors --------------------------------------------------------------------


def gini_prior(batch_attr) -> Tensor:
    """Negative normalized dispersion of the batch-mean attribution.

    ``-(sum_ij |mean_i - mean_j|) / (m * sum_i mean_i)``, with the
    denominator pushed away from zero by ``GINI_EPS`` in the direction of its
    sign. Differentiable w.r.t. whatever produced ``batch_attr``.
    """
    a = batch_attr if isinstance(batch_attr, Tensor) else ad.constant(batch_attr)
    if a.ndim == 1:
        a = ad.reshape(a, (1, a.shape[0]))
    m, n = a.shape
    if m < 1 or n < 2:
        raise ValueError("gini_prior needs at least one row and two features")
    mean = ad.mean(a, axis=0)
    pairwise = ad.sub(ad.reshape(mean, (n, 1)), ad.reshape(mean, (1, n)))
    spread = ad.sum(ad.abs(pairwise))
    total = ad.sum(mean)
    sign = 1.0 if total.data >= 0 else -1.0
    denom = ad.scale(ad.add(total, sign * GINI_EPS), float(m))
    return ad.neg(ad.div(spread, denom))


def gini_coefficient(values) -> float:
    """Gini coefficient of a nonnegative vector (0 = uniform, near 1 = one spike)."""
    v = np.sort(np.abs(np.asarray(values, dtype=np.float64)).ravel())
    n = v.size
    if n == 0 or v.sum() == 0:
        return 0.0
    cum = np.cumsum(v)
    return float((n + 1 - 2 * np.sum(cum) / cum[-1]) / n)


def mask_prior(batch_attr: Tensor, features: Sequence[int]) -> Tensor:
    """Mean squared attribution on the given feature columns."""
    cols = ad.take_columns(batch_attr, list(features))
    return ad.mean(ad.sum(ad.square(cols), axis=1))


# -- losses --------------------------------------------------------------------


def binary_cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    z = ad.reshape(logits, (logits.shape[0],))
    yt = ad.constant(np.asarray(y, dtype=np.float64))
    return ad.mean(ad.sub(ad.softplus(z), ad.mul(yt, z)))


def softmax_cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    picked = at.select_target(logits, np.asarray(y, dtype=np.intp))
    return ad.mean(ad.sub(ad.logsumexp(logits, axis=1), picked))


LOSSES = {"binary-cross-entropy": binary_cross_entropy, "softmax-cross-entropy": softmax_cross_entropy}


# -- optimizers ------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


class SGD:
    def __init__(self, params: dict, lr: float, momentum: float = 0.0):
        self.lr, self.momentum = lr, momentum
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> dict:
        out = {}
        for k, p in params.items():
            self.buf[k] = self.momentum * self.buf[k] + grads[k]
            out[k] = p - self.lr * self.buf[k]
        return out


def _optimizer(tc: TrainConfig, params: dict):
    if tc.optimizer == "adam":
        return Adam(params, tc.lr, tc.betas, tc.eps)
    return SGD(params, tc.lr, tc.momentum)


# -- objective -------------------------------------------------------------------------


def _targets(net, y: np.ndarray):
    return 0 if net.spec.output_dim == 1 else np.asarray(y, dtype=np.intp)


def batch_attribution(model, X: np.ndarray, y: np.ndarray, pc: PriorConfig, references: np.ndarray, rng) -> Tensor:
    """``[m, n]`` attributions that stay differentiable w.r.t. the model parameters."""
    target = _targets(model, y)
    if pc.method == "xg":
        a = at.x_gradient(model, X, target, create_graph=True)
    elif pc.method == "grad":
        a = at.grad_attr(model, X, target, create_graph=True)
    elif pc.method == "rrr":
        a = at.rrr_attr(model, X, target, link="log_prob", create_graph=True)
    else:
        a = at.expected_gradients(model, X, references, seed=rng, n_samples=pc.eg_refs, target=target, create_graph=True)
    g = a.graph
    return ad.reshape(g, (1, g.shape[0])) if g.ndim == 1 else g


def prior_value(attr: Tensor, pc: PriorConfig) -> Tensor:
    if pc.kind == "zero-attribution-mask":
        return mask_prior(attr, pc.features)
    return gini_prior(ad.abs(attr) if pc.absolute else attr)


@dataclass
class Objective:
    total: Tensor
    task: Tensor
    prior: Tensor | None


def objective(model, X, y, tc: TrainConfig, pc: PriorConfig | None, references=None, rng=None) -> Objective:
    """Task loss plus the weighted prior; the prior is skipped entirely when ``lam == 0``."""
    task = LOSSES[tc.loss](model(ad.constant(X)), y)
    if pc is None or pc.lam == 0:
        return Objective(task, task, None)
    refs = X if references is None else references
    omega = prior_value(batch_attribution(model, X, y, pc, refs, rng), pc)
    return Objective(ad.add(task, ad.scale(omega, pc.lam)), task, omega)


def objective_gradient(net: Network, X, y, tc: TrainConfig, pc: PriorConfig | None, references=None, rng=None):
    """``(objective, {param: gradient})`` at the network's current parameters."""
    leaves = net.parameter_tensors()
    obj = objective(net.bind(leaves), X, y, tc, pc, references, rng)
    names = list(leaves)
    grads = ad.grad(obj.total, [leaves[k] for k in names])
    return obj, {k: g.data for k, g in zip(names, grads)}


# -- training --------------------------------------------------------------------------


@dataclass
class TrainTrace:
    steps: list = field(default_factory=list)  # (epoch, step, total, task, prior)
    epochs: list = field(default_factory=list)  # dicts with train/validation metrics

    def steps_to_csv(self, path) -> None:
        """Per-step loss trace: total == task + lam * prior."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "total", "task", "prior"])
            for e, st, total, task, prior in self.steps:
                writer.writerow([e, st, repr(total), repr(task), "" if prior is None else repr(prior)])

    def to_csv(self, path) -> None:
        """Per-epoch train/validation metrics."""
        keys = sorted({k for row in self.epochs for k in row}, key=lambda k: (k != "epoch", k))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.epochs:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class TrainResult:
    net: Network
    trace: TrainTrace


def _seed_stream(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def predict_scores(net, X) -> np.ndarray:
    """Positive-class logit (one output) or per-class logits."""
    out = at.model_output(net, X)
    return out[:, 0] if out.shape[1] == 1 else out


def _evaluate(net, X, y, tc: TrainConfig) -> dict:
    with ad.no_grad():
        loss = float(LOSSES[tc.loss](net(ad.constant(X)), y).data)
    out = {"loss": loss}
    scores = predict_scores(net, X)
    if scores.ndim == 1 and len(np.unique(y)) == 2:
        out["roc_auc"] = roc_auc(scores, y)
    return out


def train(
    net: Network,
    X,
    y,
    tc: TrainConfig,
    pc: PriorConfig | None = None,
    X_val=None,
    y_val=None,
) -> TrainResult:
    """Mini-batch minimization of ``task + lam * prior``; deterministic in ``tc.seed``.

    Shuffling and EG reference draws use separate random streams, so adding a
    prior with ``lam == 0`` changes nothing bit for bit.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty [N, n] array")
    if X.shape[1] != net.spec.input_dim:
        raise ad.ShapeError("train", f"data has {X.shape[1]} features, network expects {net.spec.input_dim}")
    if pc is not None:
        pc.check_network(net)
    shuffle_rng = _seed_stream(tc.seed, "shuffle")
    attr_rng = _seed_stream(tc.seed, "attribution")
    params = {k: v.copy() for k, v in net.params.items()}
    opt = _optimizer(tc, params)
    trace = TrainTrace()
    step = 0
    for epoch in range(tc.epochs):
        order = shuffle_rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], tc.batch_size):
            idx = order[start : start + tc.batch_size]
            current = net.with_params(params)
            obj, grads = objective_gradient(current, X[idx], y[idx], tc, pc, X, attr_rng)
            total = float(obj.total.data)
            task = float(obj.task.data)
            prior = None if obj.prior is None else float(obj.prior.data)
            trace.steps.append((epoch, step, total, task, prior))
            if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"objective became non-finite at epoch {epoch}, step {step}", trace)
            params = opt.step(params, grads)
            step += 1
        current = net.with_params(params)
        row = {"epoch": epoch}
        row.update({f"train_{k}": v for k, v in _evaluate(current, X, y, tc).items()})
        if X_val is not None:
            row.update({f"val_{k}": v for k, v in _evaluate(current, np.asarray(X_val, float), np.asarray(y_val), tc).items()})
        trace.epochs.append(row)
    return TrainResult(net.with_params(params), trace)


# -- evaluation -----------------------------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# -- subsampling experiment -----------------------------------------------------------


@dataclass(frozen=True)
class Arm:
    """One configuration of the subsampling experiment."""

    name: str
    prior: PriorConfig | None = None
    bias: bool = False


BENCH_TRAIN = TrainConfig(epochs=200, batch_size=32, lr=1e-3)
BENCH_HIDDEN = (32,)


def default_arms(eg_refs: Sequence[int] = (1, 4, 16, 32), lams: dict | None = None) -> list[Arm]:
    """Unregularized (with and without bias) plus one Gini-prior arm per method.

    ``lams`` maps method name to strength; EG arms of every reference count
    share the ``eg`` entry.
    """
    lams = {"grad": 0.1, "rrr": 0.1, "xg": 0.1, "eg": 0.1, **(lams or {})}
    arms = [
        Arm("unreg", None, bias=True),
        Arm("unreg-no-bias", None, bias=False),
        Arm("grad", PriorConfig("grad", lam=lams["grad"]), bias=True),
        Arm("rrr", PriorConfig("rrr", lam=lams["rrr"]), bias=True),
        Arm("xg", PriorConfig("xg", lam=lams["xg"]), bias=False),
    ]
    arms += [Arm(f"eg{k}", PriorConfig("eg", lam=lams["eg"], eg_refs=k), bias=True) for k in eg_refs]
    return arms


@dataclass
class ExperimentSummary:
    rows: list  # (arm, repeat, roc_auc)
    arms: list

    def aggregate(self) -> dict:
        out = {}
        for arm in self.arms:
            vals = np.array([r[2] for r in self.rows if r[0] == arm])
            diverged = int(np.isnan(vals).sum())
            vals = vals[~np.isnan(vals)]
            sem = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
            mean = float(vals.mean()) if vals.size else float("nan")
            out[arm] = {"mean": mean, "sem": sem, "ci2": 2 * sem, "n": int(vals.size), "diverged": diverged}
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["config", "repeat", "roc_auc"])
            for arm, rep, auc in self.rows:
                writer.writerow([arm, rep, repr(auc)])

    def to_json(self, path=None) -> str:
        text = json.dumps(self.aggregate(), indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def _safe_auc(net, X, y) -> float:
    scores = predict_scores(net, X)
    return roc_auc(scores, y) if np.all(np.isfinite(scores)) else float("nan")


def _run_repeat(X, y, repeat, train_size, val_size, arms, hidden, tc: TrainConfig, seed) -> list:
    split_rng = _seed_stream(seed, "split", repeat)
    perm = split_rng.permutation(X.shape[0])
    tr, va = perm[:train_size], perm[train_size : train_size + val_size]
    init = init_network(mlp_spec(X.shape[1], hidden, 1, bias=True), seed=int(split_rng.integers(2**31)))
    rows = []
    for i, arm in enumerate(arms):
        net = init if arm.bias else strip_bias(init)
        arm_tc = replace(tc, seed=int(_seed_stream(seed, repeat, i).integers(2**31)))
        try:
            result = train(net, X[tr], y[tr], arm_tc, arm.prior)
            auc = _safe_auc(result.net, X[va], y[va])
        except TrainingDiverged:
            auc = float("nan")
        rows.append((arm.name, repeat, auc))
    return rows


def subsample_experiment(
    X,
    y,
    n_repeats: int,
    train_size: int,
    arms: Sequence[Arm] | None = None,
    tc: TrainConfig | None = None,
    seed: int = 0,
    val_size: int | None = None,
    hidden: Sequence[int] = (32,),
    n_jobs: int = 1,
) -> ExperimentSummary:
    """Train every arm on many small disjoint train/validation draws.

    Within a repeat all arms start from the same initial weights (bias-free
    arms from its stripped copy) and see the same data, so arm differences
    are paired.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    val_size = train_size if val_size is None else val_size
    if train_size + val_size > X.shape[0]:
        raise ValueError("train_size + val_size exceeds the dataset size")
    arms = list(default_arms() if arms is None else arms)
    tc = tc or TrainConfig()
    args = (X, y)
    if n_jobs == 1:
        chunks = [_run_repeat(*args, r, train_size, val_size, arms, tuple(hidden), tc, seed) for r in range(n_repeats)]
    else:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=n_jobs)(
            delayed(_run_repeat)(*args, r, train_size, val_size, arms, tuple(hidden), tc, seed) for r in range(n_repeats)
        )
    rows = [row for chunk in chunks for row in chunk]
    return ExperimentSummary(rows, [a.name for a in arms])


def tune_lambdas(
    X,
    y,
    methods: Sequence[str] = ("grad", "rrr", "xg", "eg"),
    grid: Sequence[float] = LAMBDA_GRID,
    n_repeats: int = 5,
    train_size: int = 100,
    tc: TrainConfig | None = None,
    seed: int = 0,
    hidden: Sequence[int] = BENCH_HIDDEN,
    n_jobs: int = 1,
) -> tuple[dict, ExperimentSummary]:
    """Pick each method's prior strength by mean validation ROC-AUC.

    Runs on its own repeats (seeded apart from any evaluation run with the
    same ``seed``). EG is tuned with one reference.
    """
    arms = []
    for m in methods:
        for lam in grid:
            pc = PriorConfig(m, lam=float(lam), eg_refs=1)
            arms.append(Arm(f"{m}@{lam:g}", pc, bias=(m != "xg")))
    summary = subsample_experiment(
        X, y, n_repeats, train_size, arms, tc or BENCH_TRAIN, seed=f"tune-{seed}", hidden=hidden, n_jobs=n_jobs
    )
    agg = summary.aggregate()
    best = {}
    for m in methods:
        scored = [(agg[f"{m}@{lam:g}"]["mean"], float(lam)) for lam in grid]
        scored = [(a, lam) for a, lam in scored if np.isfinite(a)]
        best[m] = max(scored)[1] if scored else float(grid[0])
    return best, summary


def sparsity_trends(agg: dict, eg_refs: Sequence[int] = (1, 4, 16, 32), bias_tol: float = 0.02) -> dict:
    """Check the expected ordering of the sparsity experiment's arms.

    ``xg_beats_grad_and_eg1``: the X-Gradient arm's ``mean - 2 SEM`` lies above
    ``mean + 2 SEM`` of both the gradient and the one-reference EG arm.
    ``eg_nondecreasing``: adding references never lowers the EG mean by more
    than twice the standard error of the difference.
    ``bias_irrelevant``: unregularized arms with and without bias differ by
    less than ``bias_tol``.
    """

    def lo(arm):
        return agg[arm]["mean"] - agg[arm]["ci2"]

    def hi(arm):
        return agg[arm]["mean"] + agg[arm]["ci2"]

    out = {}
    out["xg_beats_grad_and_eg1"] = {
        "pass": bool(lo("xg") > hi("grad") and lo("xg") > hi("eg1")),
        "xg_interval": [lo("xg"), hi("xg")],
        "grad_interval": [lo("grad"), hi("grad")],
        "eg1_interval": [lo("eg1"), hi("eg1")],
    }
    steps = []
    for a, b in zip(eg_refs[:-1], eg_refs[1:]):
        pa, pb = agg[f"eg{a}"], agg[f"eg{b}"]
        slack = 2 * math.hypot(pa["sem"], pb["sem"])
        steps.append({"from": a, "to": b, "change": pb["mean"] - pa["mean"], "slack": slack, "pass": bool(pb["mean"] - pa["mean"] >= -slack)})
    out["eg_nondecreasing"] = {"pass": all(s["pass"] for s in steps), "steps": steps}
    gap = abs(agg["unreg"]["mean"] - agg["unreg-no-bias"]["mean"])
    out["bias_irrelevant"] = {"pass": bool(gap < bias_tol), "gap": gap, "tolerance": bias_tol}
    return out

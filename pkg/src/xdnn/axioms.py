"""Executable attribution-axiom conformance checks.

Each check runs a method against randomized probe networks (plus fixed
counterexamples where one exists) and returns an ``AxiomReport``. A pass
from randomized trials means no violation was found; a fail always carries a
witness that can be replayed bit-for-bit from the report.

Sampling methods are compared statistically: two attributions agree when
their difference is within ``Z_SCORE`` combined standard errors. With a
single draw there is no error estimate, so agreement must be exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import attribution as at
from .network import (
    Network,
    NetworkSpec,
    activation,
    classify_homogeneity,
    dense,
    init_network,
    insert_identity,
    linear_combination,
    mlp_spec,
    network_to_dict,
    permute_hidden,
)

AXIOMS = (
    "sensitivity-a",
    "sensitivity-b",
    "implementation-invariance",
    "completeness",
    "linearity",
    "symmetry-preserving",
    "nonnegative-homogeneity",
)

DEFAULT_TRIALS = 100
DEFAULT_SEED = 42
Z_SCORE = 5.0
EXACT_RTOL = 1e-9
COMPLETENESS_RTOL = 5e-3
HOMOGENEITY_ALPHAS = (0.0, 0.3, 1.0, 2.7)
LINEARITY_COEFS = (-2.0, 0.5, 1.0, 3.0)
BACKGROUND_SIZE = 16

PASS, FAIL, NA = "pass", "fail", "not-applicable"


# -- methods under test ---------------------------------------------------------


@dataclass(frozen=True)
class Observed:
    values: np.ndarray
    stderr: np.ndarray | None = None
    stderr_total: float | None = None
    draws: np.ndarray | None = None


@dataclass(frozen=True)
class Method:
    """An attribution method configured for the suite.

    ``kind`` is one of ``ig``, ``eg``, ``grad``, ``input_x_grad``, ``xg``.
    Methods with ``zero_baseline`` ignore the probe baseline and explain
    ``F(x) - F(0)``.
    """

    name: str
    kind: str
    steps: int = 1
    homogeneous_only: bool = False

    @property
    def stochastic(self) -> bool:
        return self.kind == "eg"

    @property
    def zero_baseline(self) -> bool:
        return self.kind in ("grad", "input_x_grad", "xg")

    def __call__(self, model, x: np.ndarray, case: "Case", rng: np.random.Generator) -> Observed:
        if self.kind == "ig":
            return Observed(at.integrated_gradients(model, x, case.baseline, steps=self.steps, steps_per_call=self.steps).values)
        if self.kind == "grad":
            return Observed(at.grad_attr(model, x).values)
        if self.kind == "input_x_grad":
            return Observed(at.input_x_grad(model, x).values)
        if self.kind == "xg":
            return Observed(at.x_gradient(model, x).values)
        if self.kind == "eg":
            refs = case.references
            a = at.expected_gradients(model, x, refs, seed=rng, n_samples=self.steps, keep_draws=True)
            se = a.stderr
            se_total = None if a.stderr_total is None else float(a.stderr_total)
            return Observed(a.values, se, se_total, a.draws)
        raise ValueError(f"unknown method kind {self.kind!r}")


METHODS = {
    "ig": Method("IG@128", "ig", steps=128),
    "eg": Method("EG@128", "eg", steps=128),
    "eg1": Method("EG(1)", "eg", steps=1),
    "grad": Method("Gradient", "grad"),
    "input_x_grad": Method("Input x Gradient", "input_x_grad"),
    "xg": Method("X-Gradient", "xg", homogeneous_only=True),
}

# Cells of the published axiom matrix. ``None`` marks a cell that is recorded
# but not asserted.
EXPECTED = {
    "sensitivity-a": {"ig": PASS, "eg": PASS, "eg1": FAIL, "grad": FAIL, "input_x_grad": FAIL, "xg": PASS},
    "sensitivity-b": {"ig": PASS, "eg": PASS, "eg1": PASS, "grad": PASS, "input_x_grad": PASS, "xg": PASS},
    "implementation-invariance": {"ig": PASS, "eg": PASS, "eg1": FAIL, "grad": PASS, "input_x_grad": PASS, "xg": PASS},
    "completeness": {"ig": PASS, "eg": PASS, "eg1": FAIL, "grad": None, "input_x_grad": FAIL, "xg": PASS},
    "linearity": {"ig": PASS, "eg": PASS, "eg1": FAIL, "grad": PASS, "input_x_grad": PASS, "xg": PASS},
    "symmetry-preserving": {"ig": PASS, "eg": PASS, "eg1": FAIL, "grad": PASS, "input_x_grad": PASS, "xg": PASS},
    "nonnegative-homogeneity": {"ig": None, "eg": None, "eg1": None, "grad": None, "input_x_grad": None, "xg": PASS},
}


def resolve_method(name) -> tuple[str, Method]:
    if isinstance(name, Method):
        key = next((k for k, m in METHODS.items() if m == name), name.name)
        return key, name
    try:
        return name, METHODS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None


# -- probes -----------------------------------------------------------------------


@dataclass
class Case:
    """One probe: a network, an input, a baseline and an EG reference set."""

    net: Network
    x: np.ndarray
    baseline: np.ndarray
    background: np.ndarray | None = None
    note: str = ""

    @property
    def references(self) -> np.ndarray:
        return self.baseline[None, :] if self.background is None else self.background


def trial_rng(seed: int, axiom: str, method: str, trial: int) -> np.random.Generator:
    """Independent stream per (seed, axiom, method, trial)."""
    digest = hashlib.sha256(f"{seed}|{axiom}|{method}|{trial}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def random_network(rng, n_in: int, biased: bool, n_out: int = 1, max_depth: int = 3, max_width: int = 12) -> Network:
    depth = int(rng.integers(1, max_depth + 1))
    hidden = [int(rng.integers(2, max_width + 1)) for _ in range(depth)]
    return random_params(rng, mlp_spec(n_in, hidden, n_out, bias=biased))


def random_params(rng, spec: NetworkSpec) -> Network:
    """Fresh scaled-uniform weights and, where present, nonzero random biases."""
    net = init_network(spec, seed=int(rng.integers(2**31)))
    biased = not classify_homogeneity(spec)
    if biased:
        params = {k: (rng.normal(0.0, 0.5, size=v.shape) if k.endswith(".bias") else v) for k, v in net.params.items()}
        net = net.with_params(params)
    return net


def saturating_example() -> Network:
    """``f(x) = 1 - relu(1 - x)``: flat for ``x > 1``."""
    spec = NetworkSpec((dense(1, 1), activation("relu"), dense(1, 1)), 1, 1)
    return Network(
        spec,
        {
            "layers.0.weight": [[-1.0]],
            "layers.0.bias": [1.0],
            "layers.2.weight": [[-1.0]],
            "layers.2.bias": [1.0],
        },
    )


def _background(rng, n: int, size: int = BACKGROUND_SIZE) -> np.ndarray:
    return rng.normal(size=(size, n))


def _random_case(rng, method: Method, n: int | None = None) -> Case:
    n = int(rng.integers(2, 7)) if n is None else n
    net = random_network(rng, n, biased=not method.homogeneous_only)
    x = rng.normal(size=n)
    baseline = np.zeros(n) if method.zero_baseline else rng.normal(size=n) * 0.5
    return Case(net, x, baseline, _background(rng, n) if method.stochastic else None)


def _f(net, x) -> float:
    return float(at.model_output(net, x, 0))


def _scale(*arrays) -> float:
    return max([1.0] + [float(np.max(np.abs(a))) for a in arrays if a is not None and np.size(a)])


def _agree(a: Observed, b: Observed, coef_a: float = 1.0, coef_b: float = 1.0) -> tuple[bool, float, float]:
    """Compare ``coef_a * a`` with ``coef_b * b``; returns (ok, max deviation, allowed)."""
    diff = np.abs(coef_a * a.values - coef_b * b.values)
    tol = EXACT_RTOL * _scale(coef_a * a.values, coef_b * b.values)
    if a.stderr is not None and b.stderr is not None:
        se = np.sqrt((coef_a * a.stderr) ** 2 + (coef_b * b.stderr) ** 2)
        allowed = Z_SCORE * se + tol
    else:
        allowed = np.full_like(diff, tol)
    ok = bool(np.all(diff <= allowed))
    worst = int(np.argmax(diff - allowed))
    return ok, float(diff.flat[worst]), float(np.asarray(allowed).flat[worst])


# -- reports -------------------------------------------------------------------------


@dataclass
class Witness:
    axiom: str
    method: str
    trial: int
    seed: int
    detail: str
    observed: object
    expected: object
    network: dict | None = None
    x: list | None = None
    baseline: list | None = None

    def replay(self) -> bool:
        """Re-run the failing trial; True when it fails again."""
        check = CHECKS[self.axiom]
        outcome = check(self.method, seed=self.seed, trials=1, start=self.trial)
        return outcome.verdict == FAIL


@dataclass
class AxiomReport:
    method: str
    axiom: str
    verdict: str
    trials: int
    seed: int
    witness: Witness | None = None
    note: str = ""
    passed_trials: int = 0
    skipped_trials: int = 0

    @property
    def label(self) -> str:
        if self.verdict == PASS:
            return f"no violation found in {self.passed_trials} trials"
        if self.verdict == FAIL:
            return "violated"
        return "not applicable"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = self.label
        return d


def _witness(axiom, method, trial, seed, detail, observed, expected, case: Case | None) -> Witness:
    return Witness(
        axiom,
        method,
        trial,
        seed,
        detail,
        _jsonable(observed),
        _jsonable(expected),
        network_to_dict(case.net) if case is not None else None,
        case.x.tolist() if case is not None else None,
        case.baseline.tolist() if case is not None else None,
    )


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


TrialFn = Callable[[str, Method, int, int, np.random.Generator], tuple]


def _run(axiom: str, method, trials: int, seed: int, start: int, trial_fn: TrialFn, fixed=None) -> AxiomReport:
    """Aggregate trial outcomes: any failure fails, else any pass passes, else N/A.

    ``trial_fn`` returns ``(status, witness_or_None)`` where status is PASS,
    FAIL or NA. ``fixed`` optionally runs a deterministic counterexample first
    and follows the same protocol with trial index -1.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    key, m = resolve_method(method)
    passed = skipped = 0
    first_fail = None
    notes = []
    indices = range(start, start + trials)
    for t in ([-1] if fixed is not None and start == 0 else []) + list(indices):
        rng = trial_rng(seed, axiom, key, t)
        fn = fixed if t == -1 else trial_fn
        status, witness = fn(key, m, t, seed, rng)
        if status == PASS:
            passed += 1
        elif status == NA:
            skipped += 1
            if t == -1:
                notes.append("fixed counterexample not applicable")
        elif first_fail is None:
            first_fail = witness
    if first_fail is not None:
        verdict = FAIL
    elif passed:
        verdict = PASS
    else:
        verdict = NA
    return AxiomReport(key, axiom, verdict, trials, seed, first_fail, "; ".join(notes), passed, skipped)


# -- individual checks ---------------------------------------------------------------


def _nonzero(obs: Observed, i: int) -> bool:
    return float(obs.values[i]) != 0.0


def _sensitivity_a_fixed(key, m: Method, t, seed, rng):
    net = saturating_example()
    if m.homogeneous_only and not classify_homogeneity(net):
        return NA, None
    case = Case(net, np.array([2.0]), np.array([0.0]))
    obs = m(net, case.x, case, rng)
    if _nonzero(obs, 0):
        return PASS, None
    return FAIL, _witness(
        "sensitivity-a", key, t, seed, "F changes from 0 to 1 but the differing feature gets zero attribution",
        obs.values, "non-zero", case,
    )


def _sensitivity_a_trial(key, m: Method, t, seed, rng):
    n = int(rng.integers(2, 6))
    net = random_network(rng, n, biased=not m.homogeneous_only)
    i = int(rng.integers(n))
    baseline = np.zeros(n) if m.zero_baseline else rng.normal(size=n) * 0.5
    x = baseline.copy()
    x[i] += rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 3.0)
    if abs(_f(net, x) - _f(net, baseline)) < 1e-6:
        return NA, None
    case = Case(net, x, baseline, baseline[None, :] if m.stochastic else None)
    obs = m(net, x, case, rng)
    if _nonzero(obs, i):
        return PASS, None
    return FAIL, _witness("sensitivity-a", key, t, seed, f"feature {i} differs, attribution zero", obs.values, "non-zero", case)


def check_sensitivity_a(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Differing inputs with differing outputs must give the feature credit."""
    return _run("sensitivity-a", method, trials, seed, start, _sensitivity_a_trial, _sensitivity_a_fixed)


def _sensitivity_b_trial(key, m: Method, t, seed, rng):
    case = _random_case(rng, m)
    n = case.x.size
    dead = int(rng.integers(n))
    params = dict(case.net.params)
    w = params["layers.0.weight"].copy()
    w[:, dead] = 0.0
    params["layers.0.weight"] = w
    net = case.net.with_params(params)
    case.net = net
    obs = m(net, case.x, case, rng)
    if obs.values[dead] == 0.0:
        return PASS, None
    return FAIL, _witness(
        "sensitivity-b", key, t, seed, f"feature {dead} is disconnected", obs.values[dead], 0.0, case
    )


def check_sensitivity_b(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Features the network ignores must receive exactly zero attribution."""
    return _run("sensitivity-b", method, trials, seed, start, _sensitivity_b_trial)


def _equivalent(net: Network, rng) -> tuple[Network, str]:
    dense_layers = [i for i, layer in enumerate(net.spec.layers) if layer.kind == "dense"][:-1]
    if dense_layers and rng.uniform() < 0.5:
        layer = int(rng.choice(dense_layers))
        width = net.spec.layers[layer].weight_shape[0]
        return permute_hidden(net, layer, rng.permutation(width)), f"hidden permutation at layer {layer}"
    acts = [i + 1 for i, layer in enumerate(net.spec.layers) if layer.kind == "activation"]
    position = int(rng.choice(acts)) if acts else 0
    return insert_identity(net, position), f"identity layer inserted at {position}"


def _implementation_trial(key, m: Method, t, seed, rng):
    case = _random_case(rng, m)
    twin, how = _equivalent(case.net, rng)
    a = m(case.net, case.x, case, rng)
    b = m(twin, case.x, case, rng)
    ok, dev, allowed = _agree(a, b)
    if ok:
        return PASS, None
    return FAIL, _witness(
        "implementation-invariance", key, t, seed,
        f"{how}; max deviation {dev:.3g} > allowed {allowed:.3g}", b.values, a.values, case,
    )


def check_implementation_invariance(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Functionally equivalent networks must receive equal attributions."""
    return _run("implementation-invariance", method, trials, seed, start, _implementation_trial)


def _completeness_target(m: Method, case: Case) -> float:
    fx = _f(case.net, case.x)
    if m.stochastic:
        return fx - float(np.mean(at.model_output(case.net, case.references, 0)))
    return fx - _f(case.net, case.baseline)


def _completeness_trial(key, m: Method, t, seed, rng):
    case = _random_case(rng, m)
    target = _completeness_target(m, case)
    if abs(target) < 1e-3:
        return NA, None
    obs = m(case.net, case.x, case, rng)
    total = float(obs.values.sum())
    dev = abs(total - target)
    if m.kind == "xg":
        allowed = EXACT_RTOL * abs(target)
    elif obs.stderr_total is not None:
        allowed = Z_SCORE * obs.stderr_total + EXACT_RTOL * abs(target)
    elif m.stochastic:
        allowed = EXACT_RTOL * abs(target)
    else:
        allowed = COMPLETENESS_RTOL * abs(target)
    if dev <= allowed:
        return PASS, None
    return FAIL, _witness(
        "completeness", key, t, seed, f"sum of attributions off by {dev:.3g} (allowed {allowed:.3g})", total, target, case
    )


def check_completeness(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Attributions must add up to the output difference from the baseline."""
    return _run("completeness", method, trials, seed, start, _completeness_trial)


def _linearity_trial(key, m: Method, t, seed, rng):
    n = int(rng.integers(2, 6))
    biased = not m.homogeneous_only
    f1 = random_network(rng, n, biased)
    f2 = random_params(rng, f1.spec)
    ca, cb = (float(c) for c in rng.choice(LINEARITY_COEFS, size=2))
    combined = linear_combination(f1, f2, ca, cb)
    x = rng.normal(size=n)
    baseline = np.zeros(n) if m.zero_baseline else rng.normal(size=n) * 0.5
    case = Case(combined, x, baseline, _background(rng, n) if m.stochastic else None)
    whole = m(combined, x, case, rng)
    p1 = m(f1, x, case, rng)
    p2 = m(f2, x, case, rng)
    parts = Observed(
        ca * p1.values + cb * p2.values,
        None if p1.stderr is None else np.sqrt((ca * p1.stderr) ** 2 + (cb * p2.stderr) ** 2),
    )
    ok, dev, allowed = _agree(whole, parts)
    if ok:
        return PASS, None
    return FAIL, _witness(
        "linearity", key, t, seed, f"{ca:g}*F1 + {cb:g}*F2: deviation {dev:.3g} > {allowed:.3g}",
        whole.values, parts.values, case,
    )


def check_linearity(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Attribution of a*F1 + b*F2 (one network) must equal a*A(F1) + b*A(F2)."""
    return _run("linearity", method, trials, seed, start, _linearity_trial)


def _symmetry_trial(key, m: Method, t, seed, rng):
    n = int(rng.integers(2, 6))
    net = random_network(rng, n, biased=not m.homogeneous_only)
    params = dict(net.params)
    w = params["layers.0.weight"].copy()
    w[:, 1] = w[:, 0]
    params["layers.0.weight"] = w
    net = net.with_params(params)
    x = rng.normal(size=n)
    x[1] = x[0]
    if m.zero_baseline:
        baseline = np.zeros(n)
    else:
        baseline = rng.normal(size=n) * 0.5
        baseline[1] = baseline[0]
    background = None
    if m.stochastic:
        half = _background(rng, n, BACKGROUND_SIZE // 2)
        swapped = half.copy()
        swapped[:, [0, 1]] = half[:, [1, 0]]
        background = np.concatenate([half, swapped])
    case = Case(net, x, baseline, background)
    obs = m(net, x, case, rng)
    diff = abs(float(obs.values[0] - obs.values[1]))
    allowed = EXACT_RTOL * _scale(obs.values)
    if obs.stderr is not None:
        # the two features share draws, so bound the paired difference directly
        paired = obs.draws[:, 0] - obs.draws[:, 1]
        allowed += Z_SCORE * float(paired.std(ddof=1) / np.sqrt(len(paired)))
    if diff <= allowed:
        return PASS, None
    return FAIL, _witness(
        "symmetry-preserving", key, t, seed, f"symmetric features differ by {diff:.3g}", obs.values[:2].tolist(), "equal", case
    )


def check_symmetry(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Interchangeable features with equal values and baselines get equal credit."""
    return _run("symmetry-preserving", method, trials, seed, start, _symmetry_trial)


def _homogeneity_trial(key, m: Method, t, seed, rng):
    case = _random_case(rng, m)
    base = m(case.net, case.x, case, trial_rng(seed, "homogeneity-base", key, t))
    for alpha in HOMOGENEITY_ALPHAS:
        scaled_case = Case(
            case.net, alpha * case.x, alpha * case.baseline, None if case.background is None else alpha * case.background
        )
        obs = m(case.net, scaled_case.x, scaled_case, trial_rng(seed, f"homogeneity-{alpha}", key, t))
        ok, dev, allowed = _agree(obs, base, 1.0, alpha)
        if not ok:
            return FAIL, _witness(
                "nonnegative-homogeneity", key, t, seed, f"alpha={alpha}: deviation {dev:.3g} > {allowed:.3g}",
                obs.values, alpha * base.values, case,
            )
    return PASS, None


def check_nonneg_homogeneity(method, trials: int = DEFAULT_TRIALS, seed: int = DEFAULT_SEED, start: int = 0) -> AxiomReport:
    """Scaling input and baseline by alpha >= 0 must scale the attribution by alpha."""
    return _run("nonnegative-homogeneity", method, trials, seed, start, _homogeneity_trial)


CHECKS = {
    "sensitivity-a": check_sensitivity_a,
    "sensitivity-b": check_sensitivity_b,
    "implementation-invariance": check_implementation_invariance,
    "completeness": check_completeness,
    "linearity": check_linearity,
    "symmetry-preserving": check_symmetry,
    "nonnegative-homogeneity": check_nonneg_homogeneity,
}


# -- suite ----------------------------------------------------------------------------


@dataclass
class SuiteReport:
    reports: list = field(default_factory=list)
    seed: int = DEFAULT_SEED
    trials: int = DEFAULT_TRIALS

    def cell(self, axiom: str, method: str) -> AxiomReport | None:
        return next((r for r in self.reports if r.axiom == axiom and r.method == method), None)

    def mismatches(self) -> list[tuple[str, str, str, str]]:
        """(axiom, method, expected, observed) for every asserted cell that disagrees."""
        out = []
        for r in self.reports:
            want = EXPECTED.get(r.axiom, {}).get(r.method)
            if want is not None and r.verdict != want:
                out.append((r.axiom, r.method, want, r.verdict))
        return out

    @property
    def ok(self) -> bool:
        return not self.mismatches()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "reports": [r.to_dict() for r in self.reports],
            "mismatches": [list(m) for m in self.mismatches()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_jsonable)

    def table(self) -> str:
        methods = list(dict.fromkeys(r.method for r in self.reports))
        axioms = [a for a in AXIOMS if any(r.axiom == a for r in self.reports)]
        symbol = {PASS: "ok", FAIL: "x", NA: "n/a"}
        header = ["axiom"] + [METHODS[m].name if m in METHODS else m for m in methods]
        rows = [header]
        for a in axioms:
            row = [a]
            for m in methods:
                r = self.cell(a, m)
                if r is None:
                    row.append("")
                    continue
                want = EXPECTED.get(a, {}).get(m)
                mark = symbol[r.verdict]
                if want is not None and want != r.verdict:
                    mark += " (!)"
                elif want is None:
                    mark += " *"
                row.append(mark)
            rows.append(row)
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        lines.append("")
        lines.append(f"ok = no violation found in {self.trials} trials (seed {self.seed}); x = violated with witness;")
        lines.append("* = recorded, not asserted; (!) = disagrees with the expected matrix")
        return "\n".join(lines)


def run_suite(
    methods=("ig", "eg", "eg1", "grad", "input_x_grad", "xg"),
    axioms=AXIOMS,
    trials: int = DEFAULT_TRIALS,
    seed: int = DEFAULT_SEED,
    n_jobs: int = 1,
) -> SuiteReport:
    """Run every (axiom, method) check. Cells are independent and may run in parallel."""
    jobs = [(a, m) for a in axioms for m in methods]
    for a, m in jobs:
        if a not in CHECKS:
            raise ValueError(f"unknown axiom {a!r}")
        resolve_method(m)
    if n_jobs == 1:
        reports = [CHECKS[a](m, trials=trials, seed=seed) for a, m in jobs]
    else:
        from joblib import Parallel, delayed

        reports = Parallel(n_jobs=n_jobs)(delayed(CHECKS[a])(m, trials=trials, seed=seed) for a, m in jobs)
    return SuiteReport(list(reports), seed, trials)


# -- contrast ------------------------------------------------------------------------------


def contrast_equivariance_probe(net, X, y, alphas=(0.1, 0.3, 0.5, 1.0)) -> list[float]:
    """Classification accuracy of ``net`` on ``alpha * X`` for each alpha.

    Single-output networks are read as binary classifiers thresholded at a
    logit of zero, others by argmax.
    """
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas):
        raise ValueError("contrast factors must be positive")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    out = []
    for a in alphas:
        logits = at.model_output(net, a * X)
        pred = (logits[:, 0] > 0).astype(int) if logits.shape[1] == 1 else np.argmax(logits, axis=1)
        out.append(float(np.mean(pred == y)))
    return out

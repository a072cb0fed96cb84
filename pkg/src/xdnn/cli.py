"""Command-line entry point: ``xdnn <command> [options]``.

Every run writes into a fresh timestamped directory under ``--out``:
the result files, ``config.json`` (every resolved option, seed included)
and, where attribution calls are timed, ``timing.json``. Passing a
``config.json`` back through ``--config`` replays the run; explicit flags
override values from the file.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 a built-in
acceptance check failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import attribution as at
from . import axioms as ax
from . import metrics as mt
from . import priors as pr
from .data import DataError, generate_synthetic, ingest_csv
from .network import classify_homogeneity, init_network, load_network, mlp_spec, save_network

log = logging.getLogger("xdnn")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

COMMANDS = ("train", "attribute", "axioms", "metrics", "sparsity-bench", "ig-convergence", "contrast-probe")

DATA_DEFAULTS = {
    "data": None,
    "label_column": "label",
    "n_samples": 13000,
    "n_features": 118,
    "n_informative": 10,
    "data_seed": 0,
}

NET_DEFAULTS = {"network": None, "hidden": [32], "epochs": 20, "train_size": 2000}

DEFAULTS = {
    "train": {
        **DATA_DEFAULTS,
        "hidden": [32],
        "bias": False,
        "prior": "none",
        "lam": 0.1,
        "eg_refs": 1,
        "epochs": 50,
        "batch_size": 32,
        "lr": 1e-3,
        "train_size": 2000,
        "val_size": 1000,
        "seed": 0,
    },
    "attribute": {
        **DATA_DEFAULTS,
        **NET_DEFAULTS,
        "methods": ["xg"],
        "ig_steps": 128,
        "eg_samples": 128,
        "target": None,
        "n_inputs": 100,
        "timing_calls": 100,
        "timing_batch": 32,
        "seed": 0,
    },
    "axioms": {
        "methods": ["ig", "eg", "eg1", "grad", "input_x_grad", "xg"],
        "axioms": list(ax.AXIOMS),
        "trials": ax.DEFAULT_TRIALS,
        "n_jobs": 1,
        "seed": ax.DEFAULT_SEED,
    },
    "metrics": {
        **DATA_DEFAULTS,
        **NET_DEFAULTS,
        "methods": ["random", "grad", "input_x_grad", "eg1", "ig", "xg"],
        "fractions": list(mt.DEFAULT_FRACTIONS),
        "mask": "mean",
        "n_eval": 500,
        "timing_calls": 100,
        "timing_batch": 32,
        "seed": 0,
    },
    "sparsity-bench": {
        **DATA_DEFAULTS,
        "repeats": 50,
        "train_size": 100,
        "val_size": 100,
        "eg_sweep": [1, 4, 16, 32],
        "lam_grid": list(pr.LAMBDA_GRID),
        "lams": None,
        "tune_repeats": 5,
        "hidden": list(pr.BENCH_HIDDEN),
        "epochs": pr.BENCH_TRAIN.epochs,
        "batch_size": pr.BENCH_TRAIN.batch_size,
        "lr": pr.BENCH_TRAIN.lr,
        "n_jobs": 1,
        "check": False,
        "seed": 0,
    },
    "ig-convergence": {
        "network": None,
        "n_features": 10,
        "hidden": [32, 32],
        "bias_scale": 0.5,
        "n_inputs": 100,
        "steps": list(at.CONVERGENCE_STEPS),
        "oracle_steps": at.ORACLE_STEPS,
        "tolerance": 0.01,
        "seed": 0,
    },
    "contrast-probe": {
        **DATA_DEFAULTS,
        **NET_DEFAULTS,
        "alphas": [0.1, 0.3, 0.5, 1.0, 2.0],
        "n_eval": 1000,
        "seed": 0,
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- option parsing -------------------------------------------------------------------


def _list(value, cast=str) -> list:
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return [cast(v.strip()) if isinstance(v, str) else cast(v) for v in value]
    except ValueError as exc:
        raise UsageError(f"bad list value {value!r}: {exc}") from None


def _lams(value) -> dict | None:
    if value is None or isinstance(value, dict):
        return None if value is None else {k: float(v) for k, v in value.items()}
    out = {}
    for part in str(value).split(","):
        if "=" not in part:
            raise UsageError(f"--lams expects method=value pairs, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("1", "true", "yes", "on"):
        return True
    if str(value).lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


LIST_INT = {"hidden", "eg_sweep", "steps"}
LIST_FLOAT = {"fractions", "alphas", "lam_grid"}
LIST_STR = {"methods", "axioms"}
BOOLS = {"bias", "check"}
INTS = {
    "eg_refs",
    "n_samples", "n_features", "n_informative", "data_seed", "epochs", "batch_size", "train_size", "val_size",
    "seed", "n_inputs", "timing_calls", "timing_batch", "trials", "n_jobs", "n_eval", "repeats", "tune_repeats",
    "oracle_steps", "eg_samples", "ig_steps",
}
FLOATS = {"lam", "lr", "bias_scale", "tolerance"}


def _normalize(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if v is None:
            out[k] = None
        elif k in LIST_INT:
            out[k] = _list(v, int)
        elif k in LIST_FLOAT:
            out[k] = _list(v, float)
        elif k in LIST_STR:
            out[k] = _list(v, str)
        elif k in BOOLS:
            out[k] = _bool(v)
        elif k in INTS:
            out[k] = int(v)
        elif k in FLOATS:
            out[k] = float(v)
        elif k == "lams":
            out[k] = _lams(v)
        elif k == "target":
            out[k] = int(v)
        else:
            out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xdnn", description="Attribution tools for nonnegatively homogeneous networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of options (a previous run's config.json replays it)")
        p.add_argument("--out", default="runs", help="parent directory for the timestamped run directory")
        for key, default in DEFAULTS[name].items():
            flag = "--" + key.replace("_", "-")
            if key in BOOLS:
                p.add_argument(flag, dest=key, nargs="?", const="true", metavar="BOOL")
            else:
                p.add_argument(flag, dest=key, help=f"default: {default}")
    return parser


def resolve_config(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "out", "verbose")}
    config_path = getattr(ns, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        if loaded.pop("command", command) != command:
            raise UsageError(f"config {config_path} belongs to a different command")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update(given)
    try:
        cfg = _normalize(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    for key in ("data", "network"):
        path = cfg.get(key)
        if path is not None and not Path(path).is_file():
            raise UsageError(f"--{key}: no such file {path}")
    for key in ("n_samples", "n_features", "repeats", "trials", "n_inputs", "timing_calls", "epochs", "train_size"):
        if key in cfg and cfg[key] is not None and cfg[key] < 1:
            raise UsageError(f"--{key.replace('_', '-')} must be positive")
    if command == "train" and cfg["prior"] not in ("none",) + pr.ATTRIBUTION_METHODS:
        raise UsageError(f"--prior must be none or one of {pr.ATTRIBUTION_METHODS}")
    if command == "axioms":
        for m in cfg["methods"]:
            try:
                ax.resolve_method(m)
            except (KeyError, ValueError) as exc:
                raise UsageError(str(exc)) from None
        bad = set(cfg["axioms"]) - set(ax.AXIOMS)
        if bad:
            raise UsageError(f"unknown axioms {sorted(bad)}; choose from {ax.AXIOMS}")
    if command in ("attribute", "metrics"):
        known = {"random", "grad", "input_x_grad", "ig", "xg"}
        for m in cfg["methods"]:
            if m not in known and not (m.startswith("eg") and (m[2:] == "" or m[2:].isdigit())):
                raise UsageError(f"unknown attribution method {m!r}")
        if command == "attribute" and "random" in cfg["methods"]:
            raise UsageError("random is a metrics baseline, not an attribution method")
    if command == "metrics":
        if cfg["mask"] not in ("mean", "zero"):
            raise UsageError("--mask must be mean or zero")
        try:
            mt._check_fractions(cfg["fractions"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if command == "contrast-probe" and any(a <= 0 for a in cfg["alphas"]):
        raise UsageError("--alphas must be positive")
    if command == "sparsity-bench" and cfg["lams"] is not None:
        bad = set(cfg["lams"]) - set(pr.ATTRIBUTION_METHODS)
        if bad:
            raise UsageError(f"--lams has unknown methods {sorted(bad)}")


# -- helpers ------------------------------------------------------------------------


def _run_dir(base, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    root = Path(base)
    path = root / f"{command}-{stamp}"
    i = 1
    while path.exists():
        path = root / f"{command}-{stamp}-{i}"
        i += 1
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_default) + "\n", encoding="utf-8")


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _dataset(cfg: dict):
    if cfg.get("data"):
        return ingest_csv(cfg["data"], cfg["label_column"])
    return generate_synthetic(
        seed=cfg["data_seed"], n_samples=cfg["n_samples"], n_features=cfg["n_features"], n_informative=cfg["n_informative"]
    )


def _model(cfg: dict, ds):
    """Load ``--network`` or train a bias-free MLP on the first ``train_size`` rows."""
    if cfg.get("network"):
        net = load_network(cfg["network"])
        if net.spec.input_dim != ds.n_features:
            raise DataError(f"network expects {net.spec.input_dim} features, data has {ds.n_features}")
        return net, 0
    n_train = min(cfg["train_size"], ds.n_samples // 2)
    n_out = 1 if ds.n_classes <= 2 else ds.n_classes
    loss = "binary-cross-entropy" if n_out == 1 else "softmax-cross-entropy"
    net = init_network(mlp_spec(ds.n_features, tuple(cfg["hidden"]), n_out, bias=False), seed=cfg["seed"])
    tc = pr.TrainConfig(epochs=cfg["epochs"], seed=cfg["seed"], loss=loss)
    return pr.train(net, ds.X[:n_train], ds.y[:n_train], tc).net, n_train


def _time_calls(fn, calls: int) -> float:
    fn()
    start = time.perf_counter()
    for _ in range(calls):
        fn()
    return (time.perf_counter() - start) / calls


def _timing(net, X, methods, cfg) -> dict:
    """Mean wall-clock seconds per attribution call; informational only."""
    probe = X[: cfg["timing_batch"]]
    out = {"calls": cfg["timing_calls"], "batch": int(probe.shape[0]), "seconds_per_call": {}}
    for m in methods:
        if m == "random":
            continue
        try:
            fn = lambda m=m: mt.compute_attributions(m, net, probe, seed=cfg["seed"], ig_steps=cfg.get("ig_steps", 128))
            out["seconds_per_call"][m] = _time_calls(fn, cfg["timing_calls"])
        except mt.NotApplicable as exc:
            out["seconds_per_call"][m] = f"N/A ({exc})"
    return out


# -- commands -----------------------------------------------------------------------


def cmd_train(cfg: dict, out: Path) -> int:
    ds = _dataset(cfg)
    tr, va = cfg["train_size"], cfg["val_size"]
    if tr + va > ds.n_samples:
        raise DataError(f"train_size + val_size = {tr + va} exceeds {ds.n_samples} samples")
    n_out = 1 if ds.n_classes <= 2 else ds.n_classes
    loss = "binary-cross-entropy" if n_out == 1 else "softmax-cross-entropy"
    net = init_network(mlp_spec(ds.n_features, tuple(cfg["hidden"]), n_out, bias=cfg["bias"]), seed=cfg["seed"])
    tc = pr.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"], seed=cfg["seed"], loss=loss)
    pc = None if cfg["prior"] == "none" else pr.PriorConfig(cfg["prior"], lam=cfg["lam"], eg_refs=cfg["eg_refs"])
    result = pr.train(net, ds.X[:tr], ds.y[:tr], tc, pc, ds.X[tr : tr + va], ds.y[tr : tr + va])
    save_network(result.net, out / "network.json")
    result.trace.steps_to_csv(out / "trace.csv")
    result.trace.to_csv(out / "epochs.csv")
    _write_json(out / "summary.json", {"final": result.trace.epochs[-1], "provenance": ds.provenance})
    log.info("final epoch: %s", result.trace.epochs[-1])
    return EXIT_OK


def cmd_attribute(cfg: dict, out: Path) -> int:
    ds = _dataset(cfg)
    net, n_train = _model(cfg, ds)
    X = ds.X[n_train : n_train + cfg["n_inputs"]]
    ids = list(range(n_train, n_train + X.shape[0]))
    attrs = []
    for m in cfg["methods"]:
        values = mt.compute_attributions(
            m, net, X, cfg["target"], seed=cfg["seed"], references=ds.X[:n_train] if n_train else None,
            ig_steps=cfg["ig_steps"], eg_samples=cfg["eg_samples"],
        )
        tgt = mt._targets(net, X, cfg["target"])
        attrs.extend(at.Attribution(v, m, int(t), at.ZERO_BASELINE, cfg["ig_steps"] if m == "ig" else 1) for v, t in zip(values, tgt))
    at.attributions_to_csv(attrs, out / "attributions.csv", ids=ids * len(cfg["methods"]))
    if n_train:
        save_network(net, out / "network.json")
    _write_json(out / "timing.json", _timing(net, X, cfg["methods"], cfg))
    return EXIT_OK


def cmd_axioms(cfg: dict, out: Path) -> int:
    report = ax.run_suite(cfg["methods"], cfg["axioms"], cfg["trials"], cfg["seed"], cfg["n_jobs"])
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    table = report.table()
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    for axiom, method, want, got in report.mismatches():
        print(f"mismatch: {axiom} / {method}: expected {want}, observed {got}")
    return EXIT_OK if report.ok else EXIT_CHECK


def cmd_metrics(cfg: dict, out: Path) -> int:
    ds = _dataset(cfg)
    net, n_train = _model(cfg, ds)
    X, y = ds.X[n_train : n_train + cfg["n_eval"]], ds.y[n_train : n_train + cfg["n_eval"]]
    mask = mt.MaskFn.mean_substitution(X) if cfg["mask"] == "mean" else mt.MaskFn.fixed_reference(np.zeros(X.shape[1]))
    table = mt.benchmark_table(net, X, y, cfg["methods"], cfg["fractions"], mask, seed=cfg["seed"])
    table.to_csv(out / "metrics.csv")
    text = table.text()
    (out / "table.txt").write_text(text + "\n", encoding="utf-8")
    aucs = {m: (None if r is None else {k: v.auc for k, v in r.items()}) for m, r in table.results.items()}
    _write_json(out / "summary.json", {"auc": aucs, "not_applicable": table.reasons, "mask": mask.kind})
    if n_train:
        save_network(net, out / "network.json")
    _write_json(out / "timing.json", _timing(net, X, cfg["methods"], cfg))
    print(text)
    return EXIT_OK


def cmd_sparsity_bench(cfg: dict, out: Path) -> int:
    ds = _dataset(cfg)
    tc = pr.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"])
    lams = cfg["lams"]
    if lams is None and cfg["tune_repeats"] > 0:
        lams, tuning = pr.tune_lambdas(
            ds.X, ds.y, grid=cfg["lam_grid"], n_repeats=cfg["tune_repeats"], train_size=cfg["train_size"],
            tc=tc, seed=cfg["seed"], hidden=cfg["hidden"], n_jobs=cfg["n_jobs"],
        )
        tuning.to_csv(out / "tuning.csv")
        tuning.to_json(out / "tuning.json")
    lams = lams or {}
    _write_json(out / "lambdas.json", lams)
    arms = pr.default_arms(cfg["eg_sweep"], lams)
    summary = pr.subsample_experiment(
        ds.X, ds.y, cfg["repeats"], cfg["train_size"], arms, tc, cfg["seed"], cfg["val_size"], cfg["hidden"], cfg["n_jobs"]
    )
    summary.to_csv(out / "runs.csv")
    summary.to_json(out / "summary.json")
    agg = summary.aggregate()
    trends = pr.sparsity_trends(agg, cfg["eg_sweep"]) if 1 in cfg["eg_sweep"] else {}
    _write_json(out / "trends.json", trends)
    for arm, s in agg.items():
        print(f"{arm:14s} roc-auc {s['mean']:.4f} +- {s['ci2']:.4f} (2 SEM, n={s['n']})")
    for name, t in trends.items():
        print(f"{name}: {'pass' if t['pass'] else 'FAIL'}")
    if cfg["check"] and not all(t["pass"] for t in trends.values()):
        return EXIT_CHECK
    return EXIT_OK


def _biased_probe_net(cfg: dict):
    rng = np.random.default_rng(cfg["seed"])
    net = init_network(mlp_spec(cfg["n_features"], tuple(cfg["hidden"]), 1, bias=True), seed=cfg["seed"])
    params = {
        k: (v + rng.normal(0.0, cfg["bias_scale"], v.shape) if k.endswith(".bias") else v) for k, v in net.params.items()
    }
    return net.with_params(params)


def cmd_ig_convergence(cfg: dict, out: Path) -> int:
    net = load_network(cfg["network"]) if cfg["network"] else _biased_probe_net(cfg)
    rng = np.random.default_rng([cfg["seed"], 1])
    X = rng.normal(size=(cfg["n_inputs"], net.spec.input_dim))
    curve = at.ig_convergence(net, X, steps=cfg["steps"], oracle_steps=cfg["oracle_steps"])
    _write_rows(out / "curve.csv", ["steps", "mean_abs_diff", "relative"], [[s, repr(d), repr(r)] for s, d, r in curve.rows()])
    checks = {"nonincreasing": curve.is_nonincreasing()}
    if 128 in curve.steps and 256 in curve.steps:
        gap = abs(curve.at(128) - curve.at(256)) / curve.scale
        checks["gap_128_256"] = gap
        checks["gap_within_tolerance"] = bool(gap <= cfg["tolerance"])
    if not cfg["network"]:
        save_network(net, out / "network.json")
    _write_json(out / "summary.json", {"scale": curve.scale, "oracle_steps": curve.oracle_steps, "checks": checks})
    for s, d, r in curve.rows():
        print(f"{s:5d} steps: mean abs diff {d:.3e} ({100 * r:.3f}% of mean |oracle|)")
    ok = checks["nonincreasing"] and checks.get("gap_within_tolerance", True)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_contrast_probe(cfg: dict, out: Path) -> int:
    ds = _dataset(cfg)
    net, n_train = _model(cfg, ds)
    X, y = ds.X[n_train : n_train + cfg["n_eval"]], ds.y[n_train : n_train + cfg["n_eval"]]
    acc = ax.contrast_equivariance_probe(net, X, y, cfg["alphas"])
    _write_rows(out / "accuracy.csv", ["alpha", "accuracy"], [[repr(a), repr(v)] for a, v in zip(cfg["alphas"], acc)])
    homogeneous = classify_homogeneity(net).homogeneous
    constant = len(set(acc)) == 1
    _write_json(out / "summary.json", {"homogeneous": homogeneous, "constant": constant, "accuracy": acc})
    if n_train:
        save_network(net, out / "network.json")
    for a, v in zip(cfg["alphas"], acc):
        print(f"alpha {a:g}: accuracy {v:.4f}")
    return EXIT_CHECK if homogeneous and not constant else EXIT_OK


HANDLERS = {
    "train": cmd_train,
    "attribute": cmd_attribute,
    "axioms": cmd_axioms,
    "metrics": cmd_metrics,
    "sparsity-bench": cmd_sparsity_bench,
    "ig-convergence": cmd_ig_convergence,
    "contrast-probe": cmd_contrast_probe,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("xdnn: a command is required: " + ", ".join(COMMANDS))
        cfg = resolve_config(ns.command, ns)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        out = _run_dir(getattr(ns, "out", "runs"), ns.command)
        _write_json(out / "config.json", {"command": ns.command, **cfg})
        code = HANDLERS[ns.command](cfg, out)
    except Exception as exc:  # runtime failures become exit code 2
        log.debug("failure", exc_info=True)
        print(f"xdnn {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"results in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())

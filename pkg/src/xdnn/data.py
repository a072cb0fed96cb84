"""Tabular datasets: CSV ingestion and a synthetic sparse-signal generator."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets; carries the offending line or column when known."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__((", ".join(where) + ": " if where else "") + message)


@dataclass
class DatasetHandle:
    X: np.ndarray
    y: np.ndarray
    feature_names: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataError(f"features {self.X.shape} and labels {self.y.shape} do not line up")
        if not np.all(np.isfinite(self.X)):
            raise DataError("features contain missing or non-finite values")
        if self.y.size and self.y.min() < 0:
            raise DataError("labels must be 0..C-1")
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError("one feature name per column is required")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if self.y.size else 0

    def subset(self, index) -> "DatasetHandle":
        return DatasetHandle(self.X[index], self.y[index], list(self.feature_names), dict(self.provenance))

    def to_csv(self, path, label_column: str = "label") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.feature_names) + [label_column])
            for row, label in zip(self.X, self.y):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


def ingest_csv(path, label_column: str = "label") -> DatasetHandle:
    """Read a numeric CSV with a header row; every non-label column is a feature."""
    raw = Path(path).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"not UTF-8 text ({exc})") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty file", line=1) from None
    if label_column not in header:
        raise DataError(f"label column {label_column!r} not found in header {header}", line=1)
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header", line=1)
    li = header.index(label_column)
    names = [h for i, h in enumerate(header) if i != li]
    rows, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
        values = []
        for name, cell in zip(header, row):
            cell = cell.strip()
            if cell == "":
                raise DataError("missing value", line=lineno, column=name)
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"non-numeric value {cell!r}", line=lineno, column=name) from None
            if not math.isfinite(v):
                raise DataError(f"non-finite value {cell!r}", line=lineno, column=name)
            values.append(v)
        label = values.pop(li)
        if label != int(label) or label < 0:
            raise DataError(f"label {label!r} is not a class index 0..C-1", line=lineno, column=label_column)
        rows.append(values)
        labels.append(int(label))
    if not rows:
        raise DataError("no data rows")
    X = np.array(rows, dtype=np.float64)
    return DatasetHandle(X, np.array(labels), names, {"source": str(path), "sha256": digest})


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the sparse-signal binary benchmark.

    Labels are balanced coin flips. Informative feature ``j`` has its
    class-conditional mean moved by ``+-shift * s_j * strength_decay**j`` with
    ``s_j`` drawn from ``strength_range``, so a few features can dominate.
    Nuisance features are Gaussian noise sharing a block factor (correlation
    ``block_corr`` within blocks of ``block_size``). A ``binary_fraction`` of
    all columns becomes 0/1 indicators, thresholded so that each is active in
    a fraction of rows drawn from ``prevalence_range``, mimicking one-hot
    attributes. Continuous columns are standardized, or multiplied by a scale
    drawn log-uniformly from ``scale_range`` when ``standardize`` is off;
    indicator columns stay 0/1.
    """

    n_features: int = 118
    n_informative: int = 10
    n_samples: int = 13000
    shift: float = 0.5
    strength_range: tuple = (0.5, 1.5)
    strength_decay: float = 0.8
    scale_range: tuple = (1.0, 1.0)
    block_size: int = 8
    block_corr: float = 0.5
    binary_fraction: float = 0.85
    prevalence_range: tuple = (0.01, 0.1)
    standardize: bool = True

    def validate(self) -> None:
        if self.n_features < 1 or self.n_samples < 1:
            raise DataError("n_features and n_samples must be positive")
        if not 0 <= self.n_informative <= self.n_features:
            raise DataError("need 0 <= n_informative <= n_features")
        if self.block_size < 1 or not 0 <= self.block_corr < 1:
            raise DataError("block_size must be positive and block_corr in [0, 1)")
        if not 0 <= self.binary_fraction <= 1:
            raise DataError("binary_fraction must lie in [0, 1]")
        if not 0 < self.prevalence_range[0] <= self.prevalence_range[1] < 1:
            raise DataError("prevalence_range must be an ordered pair inside (0, 1)")
        lo, hi = self.strength_range
        if not 0 <= lo <= hi:
            raise DataError("strength_range must be an ordered nonnegative pair")
        if not 0 < self.strength_decay <= 1:
            raise DataError("strength_decay must lie in (0, 1]")
        if not 0 < self.scale_range[0] <= self.scale_range[1]:
            raise DataError("scale_range must be an ordered positive pair")


def generate_synthetic(spec: SyntheticSpec | None = None, seed: int = 0, **overrides) -> DatasetHandle:
    """Draw a dataset from ``spec``; deterministic in ``seed``.

    Informative columns are the first ``n_informative`` features before a
    seeded shuffle of column order; the provenance records where they ended up.
    """
    spec = SyntheticSpec(**{**asdict(spec or SyntheticSpec()), **overrides})
    spec.validate()
    rng = np.random.default_rng(seed)
    n, p, k = spec.n_samples, spec.n_features, spec.n_informative
    y = rng.integers(0, 2, size=n)
    n_blocks = math.ceil(p / spec.block_size)
    factors = rng.normal(size=(n, n_blocks))
    block_of = np.arange(p) // spec.block_size
    rho = spec.block_corr
    X = math.sqrt(rho) * factors[:, block_of] + math.sqrt(1 - rho) * rng.normal(size=(n, p))
    # informative columns get their own noise so the signal is not shared with nuisance blocks
    X[:, :k] = rng.normal(size=(n, k))
    strength = rng.uniform(*spec.strength_range, size=k) * rng.choice([-1.0, 1.0], size=k)
    strength *= spec.strength_decay ** np.arange(k)
    X[:, :k] += spec.shift * strength * (2 * y[:, None] - 1)
    is_binary = np.zeros(p, dtype=bool)
    n_binary = int(round(spec.binary_fraction * p))
    if n_binary:
        cols = rng.choice(p, size=n_binary, replace=False)
        prevalence = rng.uniform(*spec.prevalence_range, size=n_binary)
        cut = np.array([np.quantile(X[:, c], 1 - q) for c, q in zip(cols, prevalence)])
        X[:, cols] = (X[:, cols] > cut).astype(np.float64)
        is_binary[cols] = True
    cont = ~is_binary
    if spec.standardize:
        sd = X[:, cont].std(axis=0)
        X[:, cont] = (X[:, cont] - X[:, cont].mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    else:
        lo, hi = spec.scale_range
        X[:, cont] = X[:, cont] * np.exp(rng.uniform(np.log(lo), np.log(hi), size=int(cont.sum())))
    order = rng.permutation(p)
    X = X[:, order]
    informative = sorted(int(np.where(order == j)[0][0]) for j in range(k))
    binary = sorted(int(np.where(order == j)[0][0]) for j in np.where(is_binary)[0])
    names = [f"x{i:03d}" for i in range(p)]
    provenance = {"generator": "synthetic", "spec": asdict(spec), "seed": seed, "informative": informative, "binary": binary}
    return DatasetHandle(X, y, names, provenance)


def disjoint_split(n: int, sizes: Sequence[int], rng) -> list[np.ndarray]:
    """Disjoint random index sets of the given sizes."""
    if sum(sizes) > n:
        raise DataError(f"cannot draw {sum(sizes)} disjoint samples from {n}")
    perm = rng.permutation(n)
    out, start = [], 0
    for s in sizes:
        out.append(np.sort(perm[start : start + s]))
        start += s
    return out

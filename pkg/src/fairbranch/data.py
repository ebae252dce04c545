"""Multi-task tabular datasets with a binary protected attribute.

A :class:`Dataset` bundles the feature matrix ``X``, the protected attribute
``s`` (0 for group g, 1 for the complementary group) and an ``n x T`` label
matrix.  Besides CSV ingestion, the module can synthesize data with planted
task families and an injected group bias, which gives the grouping and
fairness code something with a known answer to recover.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError, SchemaError, SplitError

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "SplitSpec",
    "Standardizer",
    "generate_synthetic",
    "load_csv",
    "write_csv",
    "write_metadata",
    "read_metadata",
    "split_indices",
    "stratified_split",
    "batch_iter",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    protected: np.ndarray
    labels: np.ndarray
    task_names: tuple[str, ...]
    feature_names: tuple[str, ...] = ()
    task_meta: Mapping[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        X = _frozen(self.features, np.float64)
        s = _frozen(self.protected, np.int8)
        Y = _frozen(self.labels, np.int8)
        if X.ndim != 2 or s.ndim != 1 or Y.ndim != 2:
            raise SchemaError("features and labels must be 2-D, protected 1-D")
        n = X.shape[0]
        if s.shape[0] != n or Y.shape[0] != n:
            raise SchemaError(f"row counts disagree: X={n}, s={s.shape[0]}, Y={Y.shape[0]}")
        names = tuple(self.task_names)
        if Y.shape[1] != len(names):
            raise SchemaError(f"{Y.shape[1]} label columns but {len(names)} task names")
        if not np.isin(s, (0, 1)).all() or not np.isin(Y, (0, 1)).all():
            raise ParseError("protected attribute and labels must be 0/1")
        fnames = tuple(self.feature_names) or tuple(f"f{j}" for j in range(X.shape[1]))
        if len(fnames) != X.shape[1]:
            raise SchemaError("feature_names does not match the feature count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "protected", s)
        object.__setattr__(self, "labels", Y)
        object.__setattr__(self, "task_names", names)
        object.__setattr__(self, "feature_names", fnames)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.labels.shape[1]

    def has_both_groups(self) -> bool:
        return bool((self.protected == 0).any() and (self.protected == 1).any())

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.protected[idx],
            self.labels[idx],
            self.task_names,
            self.feature_names,
            self.task_meta,
        )

    def select_tasks(self, tasks: Sequence[int]) -> "Dataset":
        tasks = list(tasks)
        names = tuple(self.task_names[t] for t in tasks)
        meta = {k: v for k, v in self.task_meta.items() if k in names}
        return Dataset(
            self.features, self.protected, self.labels[:, tasks], names, self.feature_names, meta
        )

    def with_features(self, X) -> "Dataset":
        return Dataset(X, self.protected, self.labels, self.task_names, self.feature_names, self.task_meta)


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine map ``(x - shift) / scale`` fitted on a training split."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(mu, sd)

    @classmethod
    def identity(cls, m: int) -> "Standardizer":
        return cls(np.zeros(m), np.ones(m))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.shift) / self.scale


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the planted-family generator.

    The last feature column is a noisy proxy of the protected attribute
    (``proxy_strength`` sets its group mean offset), so a model can learn the
    injected bias; the remaining columns drive the clean labels.
    """

    n_samples: int
    n_features: int
    n_tasks: int
    n_families: int
    bias_strength: float = 0.0
    noise: float = 0.0
    seed: int = 0
    proxy_strength: float = 1.0
    perturbation: float = 0.1

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be >= 2")
        if self.n_features < 2:
            raise ConfigurationError("n_features must be >= 2 (one column is the group proxy)")
        if self.n_tasks < 1 or self.n_families < 1:
            raise ConfigurationError("n_tasks and n_families must be >= 1")
        if self.n_families > self.n_tasks:
            raise ConfigurationError(
                f"n_families ({self.n_families}) exceeds n_tasks ({self.n_tasks})"
            )
        if self.bias_strength < 0 or not 0 <= self.noise < 1:
            raise ConfigurationError("bias_strength must be >= 0 and noise in [0, 1)")
        if self.bias_strength + self.noise >= 0.5:
            raise ConfigurationError("bias_strength + noise must stay below 0.5")
        if self.perturbation < 0:
            raise ConfigurationError("perturbation must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset whose tasks come in ``spec.n_families`` planted families.

    Task ``t`` belongs to family ``t % n_families``.  Its clean label is
    ``1[x . (w_family + perturbation * eps_t) > 0]`` on the latent columns.
    Labels are flipped with probability ``noise``; afterwards, for the
    odd-indexed (bias-flagged) tasks, positives of group 1 are set to 0 with
    probability ``bias_strength``.  ``task_meta`` records the planted family
    and bias flag of each task.
    """
    n, m, T, F = spec.n_samples, spec.n_features, spec.n_tasks, spec.n_families
    rng = np.random.default_rng(spec.seed)
    s = rng.permutation(np.arange(n) % 2)
    Z = rng.standard_normal((n, m - 1))
    proxy = spec.proxy_strength * (2.0 * s - 1.0) + rng.standard_normal(n)
    family_w = rng.standard_normal((F, m - 1))
    eps = rng.standard_normal((T, m - 1))
    family = np.arange(T) % F
    W = family_w[family] + spec.perturbation * eps
    Y = (Z @ W.T > 0).astype(np.int8)

    flip = rng.random((n, T)) < spec.noise
    Y = np.where(flip, 1 - Y, Y)
    biased = np.arange(T) % 2 == 1
    drop = (rng.random((n, T)) < spec.bias_strength) & biased & (s[:, None] == 1)
    Y = np.where(drop, 0, Y).astype(np.int8)

    names = tuple(f"t{t}" for t in range(T))
    meta = {names[t]: {"family": int(family[t]), "biased": bool(biased[t])} for t in range(T)}
    X = np.column_stack([Z, proxy])
    return Dataset(X, s, Y, names, tuple(f"f{j}" for j in range(m)), meta)


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, protected_column: str, task_columns: Sequence[str]) -> Dataset:
    """Read a header-row CSV.

    Every column that is neither the protected column nor a task column
    becomes a feature, in header order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        header = [h.strip() for h in header]
        task_columns = list(task_columns)
        missing = [c for c in [protected_column, *task_columns] if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        p_idx = header.index(protected_column)
        t_idx = [header.index(c) for c in task_columns]
        special = {p_idx, *t_idx}
        f_idx = [j for j in range(len(header)) if j not in special]

        X, s, Y = [], [], []
        for row_no, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                X.append([float(row[j]) for j in f_idx])
            except ValueError:
                raise ParseError(f"{path}: row {row_no} has a non-numeric feature value") from None
            s.append(_binary(row[p_idx], path, row_no, protected_column))
            Y.append([_binary(row[j], path, row_no, header[j]) for j in t_idx])

    n = len(s)
    X = np.array(X, dtype=np.float64).reshape(n, len(f_idx))
    Y = np.array(Y, dtype=np.int8).reshape(n, len(t_idx))
    return Dataset(X, np.array(s, dtype=np.int8), Y, tuple(task_columns), tuple(header[j] for j in f_idx))


def _binary(raw: str, path, row_no: int, column: str) -> int:
    v = raw.strip()
    if v in ("0", "1"):
        return int(v)
    try:
        f = float(v)
    except ValueError:
        f = math.nan
    if f in (0.0, 1.0):
        return int(f)
    raise ParseError(f"{path}: row {row_no}, column {column!r}: expected 0/1, got {raw!r}")


def write_csv(d: Dataset, path, protected_column: str = "s") -> None:
    """Write features (shortest round-trip float repr), protected, tasks."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.feature_names, protected_column, *d.task_names])
        for i in range(d.n_samples):
            w.writerow(
                [repr(float(x)) for x in d.features[i]]
                + [int(d.protected[i])]
                + [int(y) for y in d.labels[i]]
            )


def write_metadata(d: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dict(d.task_meta), indent=2, sort_keys=True) + "\n")


def read_metadata(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# splitting and batching


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    stratify_on: str = "protected"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.stratify_on not in ("protected", "none"):
            raise ConfigurationError("stratify_on must be 'protected' or 'none'")


def split_indices(d: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return sorted (train, test) index arrays.

    The train side gets ``floor(train_fraction * n)`` rows in total, spread
    over the strata by largest remainder so each stratum is within one row
    of its exact share.
    """
    n = d.n_samples
    if spec.stratify_on == "protected":
        strata = [np.flatnonzero(d.protected == g) for g in (0, 1)]
        for g, idx in enumerate(strata):
            if len(idx) < 2:
                raise SplitError(f"protected group {g} has {len(idx)} sample(s); need >= 2")
    else:
        strata = [np.arange(n)]

    total = math.floor(spec.train_fraction * n + 1e-9)
    exact = [spec.train_fraction * len(idx) for idx in strata]
    quota = [math.floor(e + 1e-9) for e in exact]
    leftover = total - sum(quota)
    order = sorted(range(len(strata)), key=lambda k: (-(exact[k] - quota[k]), k))
    for k in order[:leftover]:
        quota[k] += 1

    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    for idx, q in zip(strata, quota):
        perm = rng.permutation(idx)
        train.append(perm[:q])
        test.append(perm[q:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(d, spec)
    return d.subset(tr), d.subset(te)


def batch_iter(n: int | Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Chunks of a permutation of ``range(n)`` seeded by ``(seed, epoch)``."""
    if isinstance(n, Dataset):
        n = n.n_samples
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]

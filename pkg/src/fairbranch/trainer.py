"""Training loops: FairBranch, the vanilla fair-MTL baseline and single-task learners.

All three share one loop.  Per batch: forward and per-task backprop, the
intra-task fairness weight, the conflict pass (correcting only for
FairBranch), and the SGD step.  FairBranch then checks the branch
condition once per epoch, after the last batch.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .branching import BranchEvent, Schedule, branch_event
from .conflict import ConflictRecord, fbgrad_pass
from .data import Dataset, Standardizer, batch_iter
from .errors import ConfigurationError, NumericError
from .grouping import TaskGroup, singletons
from .network import Topology, apply_update, forward, init_model, per_task_gradients
from .objectives import intra_task_lambda, nll_loss, robust_fairness_loss

log = logging.getLogger(__name__)

MODES = ("fairbranch", "vanilla", "stl")
SAMPLING = ("epoch_end", "all", "off")


@dataclass(frozen=True)
class Convergence:
    rel_tol: float = 1e-4
    patience: int = 10


@dataclass(frozen=True)
class TrainConfig:
    hidden_widths: tuple[int, ...] = (32, 32, 16)
    eta: float = 0.05
    batch_size: int = 256
    max_epochs: int = 200
    tau: float = 0.7
    lambda_default: float = 1.0
    schedule: Schedule = Schedule()
    convergence: Convergence = Convergence()
    seed: int = 0
    standardize: bool = True
    stl_fair: bool = True
    conflict_sampling: str = "epoch_end"
    fixed_order: bool = False
    shared_head_init: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.eta > 0:
            raise ConfigurationError("eta must be > 0")
        if not 0 < self.tau <= 1:
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")
        if self.convergence.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_epochs >= 0")
        if self.lambda_default < 0:
            raise ConfigurationError("lambda_default must be >= 0")
        if self.conflict_sampling not in SAMPLING:
            raise ConfigurationError(f"conflict_sampling must be one of {SAMPLING}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = Schedule(**d["schedule"])
        if "convergence" in d:
            d["convergence"] = Convergence(**d["convergence"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class EpochStats:
    epoch: int
    train_acc: list[float]
    train_fair: list[float]
    val_acc: list[float]
    val_fair: list[float]
    val_total: float


@dataclass
class TrainReport:
    mode: str
    task_names: tuple[str, ...]
    config: TrainConfig
    topology: Topology
    groups: list[TaskGroup]
    history: list[EpochStats] = field(default_factory=list)
    conflicts: list[ConflictRecord] = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False

    @property
    def events(self) -> list[BranchEvent]:
        return self.topology.events

    def to_dict(self) -> dict:
        top = self.topology
        return {
            "mode": self.mode,
            "task_names": list(self.task_names),
            "config": self.config.to_dict(),
            "epochs_run": self.epochs_run,
            "converged": self.converged,
            "d_c": top.d_c,
            "groups": [g.to_dict() for g in self.groups],
            "branch_events": [e.to_dict() for e in top.events],
            "standardization": None if top.input_shift is None else {
                "shift": top.input_shift.tolist(), "scale": top.input_scale.tolist()},
            "history": [asdict(h) for h in self.history],
            "n_conflicts": len(self.conflicts),
        }


def convergence_check(history: Sequence[float], rel_tol: float = 1e-4, patience: int = 10) -> bool:
    """True once the best loss has gone ``patience`` epochs without a relative
    improvement of at least ``rel_tol``."""
    if not history:
        raise ValueError("empty loss history")
    best = history[0]
    stale = 0
    for v in history[1:]:
        if v < best - rel_tol * abs(best):
            best = v
            stale = 0
        else:
            stale += 1
    return stale >= patience


def dataset_losses(top: Topology, X, Y, s) -> tuple[np.ndarray, np.ndarray]:
    probs = forward(top, X).probs
    acc = np.array([nll_loss(probs[:, t], Y[:, t]) for t in range(top.n_tasks)])
    fair = np.array([robust_fairness_loss(probs[:, t], Y[:, t], s)[0] for t in range(top.n_tasks)])
    return acc, fair


def _check_pair(train: Dataset, val: Dataset):
    if train.n_features != val.n_features or train.task_names != val.task_names:
        raise ConfigurationError("train and validation sets disagree on features or tasks")
    if not train.has_both_groups():
        raise ConfigurationError("training set lacks one of the protected groups")


def _train(train: Dataset, val: Dataset, cfg: TrainConfig, mode: str) -> TrainReport:
    _check_pair(train, val)
    T = train.n_tasks
    top = init_model(
        train.n_features, cfg.hidden_widths, T, cfg.seed, train.task_names, cfg.shared_head_init
    )
    scaler = Standardizer.fit(train.features) if cfg.standardize else Standardizer.identity(train.n_features)
    top.input_shift, top.input_scale = scaler.shift, scaler.scale
    Xtr, Xva = scaler.transform(train.features), scaler.transform(val.features)
    Ytr, Yva = train.labels, val.labels
    str_, sva = train.protected, val.protected

    lam_default = cfg.lambda_default if (mode != "stl" or cfg.stl_fair) else 0.0
    groups = singletons(T)
    rng = np.random.default_rng([cfg.seed, 1])
    report = TrainReport(mode, train.task_names, cfg, top, groups)
    totals: list[float] = []

    for epoch in range(1, cfg.max_epochs + 1):
        batches = batch_iter(train.n_samples, cfg.batch_size, cfg.seed, epoch)
        for i, idx in enumerate(batches):
            try:
                grads = per_task_gradients(top, Xtr[idx], Ytr[idx], str_[idx])
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {i}: {e}") from e
            lambdas = [intra_task_lambda(grads, t, lam_default) for t in range(T)]
            grads, recs = fbgrad_pass(
                top, grads, lambdas, epoch, rng,
                correct=mode == "fairbranch", fixed_order=cfg.fixed_order,
            )
            if cfg.conflict_sampling == "all" or (
                cfg.conflict_sampling == "epoch_end" and i == len(batches) - 1
            ):
                report.conflicts.extend(recs)
            apply_update(top, grads, lambdas, cfg.eta)

        if mode == "fairbranch":
            groups, event = branch_event(top, groups, cfg.tau, epoch, cfg.schedule)
            if event is not None:
                log.info("epoch %d: branched depth %d into %s", epoch, event.d_c_before, event.groups)

        tr_acc, tr_fair = dataset_losses(top, Xtr, Ytr, str_)
        va_acc, va_fair = dataset_losses(top, Xva, Yva, sva)
        total = float(np.sum(va_acc + va_fair))
        report.history.append(EpochStats(
            epoch, tr_acc.tolist(), tr_fair.tolist(), va_acc.tolist(), va_fair.tolist(), total))
        totals.append(total)
        report.epochs_run = epoch
        if convergence_check(totals, cfg.convergence.rel_tol, cfg.convergence.patience):
            report.converged = True
            break

    report.groups = groups
    return report


def train_fairbranch(train: Dataset, val: Dataset, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    return _train(train, val, cfg, "fairbranch")


def train_vanilla_mtl(train: Dataset, val: Dataset, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    return _train(train, val, cfg, "vanilla")


def train_stl(train: Dataset, val: Dataset, task_id: int, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """Single-head network with the same trunk widths, trained on one task."""
    if not 0 <= task_id < train.n_tasks:
        raise ConfigurationError(f"task id {task_id} outside 0..{train.n_tasks - 1}")
    return _train(train.select_tasks([task_id]), val.select_tasks([task_id]), cfg, "stl")


def train_stls(train: Dataset, val: Dataset, cfg: TrainConfig = TrainConfig()) -> dict[str, TrainReport]:
    return {name: train_stl(train, val, t, cfg) for t, name in enumerate(train.task_names)}

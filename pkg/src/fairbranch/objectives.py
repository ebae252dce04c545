"""Per-task accuracy loss, the robust group-conditioned fairness loss, and
the intra-task weight that switches the fairness term off when it fights
the task's own accuracy gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedLossError

EPS = 1e-7


def clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def _nll(p, y):
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def nll_loss(p, y) -> float:
    """Mean binary negative log likelihood."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.size == 0:
        raise UndefinedLossError("negative log likelihood of an empty batch is undefined")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: p{p.shape} vs y{y.shape}")
    return float(np.mean(_nll(p, y)))


@dataclass(frozen=True)
class GroupClassLosses:
    """Mean NLL per (class y, group) cell; ``losses[y, g]`` is NaN when the cell is empty."""

    losses: np.ndarray
    present: np.ndarray
    counts: np.ndarray


@dataclass
class BatchLosses:
    acc: np.ndarray
    fair: np.ndarray
    tables: list[GroupClassLosses]


def group_class_losses(p, y, s) -> GroupClassLosses:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    s = np.asarray(s)
    per = _nll(p, y.astype(np.float64))
    losses = np.full((2, 2), np.nan)
    counts = np.zeros((2, 2), dtype=np.int64)
    for c in (0, 1):
        for g in (0, 1):
            mask = (y == c) & (s == g)
            k = int(mask.sum())
            counts[c, g] = k
            if k:
                losses[c, g] = per[mask].mean()
    return GroupClassLosses(losses, counts > 0, counts)


def robust_fairness_loss(p, y, s) -> tuple[float, GroupClassLosses]:
    """Sum over classes of the worst group's class-conditioned NLL.

    A class present for only one group uses that group's loss; a class absent
    from the batch contributes 0.
    """
    p, y, s = np.asarray(p), np.asarray(y), np.asarray(s)
    if not (p.shape == y.shape == s.shape):
        raise ValueError("p, y and s must have equal lengths")
    table = group_class_losses(p, y, s)
    total = 0.0
    for c in (0, 1):
        row = table.losses[c][table.present[c]]
        if row.size:
            total += float(row.max())
    return total, table


def fairness_backprop_selector(table: GroupClassLosses) -> tuple[int | None, int | None]:
    """For each class, the group whose samples carry the fairness gradient.

    ``None`` marks an empty class.  Ties go to group 0.
    """
    out = []
    for c in (0, 1):
        present = table.present[c]
        if not present.any():
            out.append(None)
        elif present.all():
            out.append(0 if table.losses[c, 0] >= table.losses[c, 1] else 1)
        else:
            out.append(int(np.flatnonzero(present)[0]))
    return out[0], out[1]


def fairness_sample_weights(y, s, selection) -> np.ndarray:
    """Weights w with dF/dlogit_i = w_i * (p_i - y_i).

    Each selected (class, group) cell spreads weight ``1/|cell|`` over its
    samples so the result is the gradient of that cell's mean NLL.
    """
    y = np.asarray(y)
    s = np.asarray(s)
    w = np.zeros(y.shape[0])
    for c, g in enumerate(selection):
        if g is None:
            continue
        mask = (y == c) & (s == g)
        w[mask] = 1.0 / mask.sum()
    return w


def intra_task_lambda(grads, t: int, lambda_default: float = 1.0) -> float:
    """Zero when the head-layer accuracy and fairness gradients of task t oppose."""
    acc = grads.flat(t, grads.head_key(t), "acc")
    fair = grads.flat(t, grads.head_key(t), "fair")
    return 0.0 if float(acc @ fair) < 0 else float(lambda_default)

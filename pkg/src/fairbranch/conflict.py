"""Gradient conflict detection and branch-scoped fairness-gradient projection."""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .network import GradientSet, Topology

ACCURACY = "accuracy"
FAIRNESS = "fairness"


@dataclass(frozen=True)
class ConflictRecord:
    epoch: int
    depth: int
    task_a: int
    task_b: int
    kind: str
    cosine: float
    corrected: bool

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> tuple:
        return astuple(self)


def detect_conflict(g1, g2) -> bool:
    """True iff the two flattened gradients have a negative dot product."""
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise ShapeError(f"gradient lengths differ: {g1.size} vs {g2.size}")
    return float(g1 @ g2) < 0


def conflict_cosine(g1, g2) -> float | None:
    """Cosine of the angle between two gradients; None if either is zero."""
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise ShapeError(f"gradient lengths differ: {g1.size} vs {g2.size}")
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        return None
    return float(np.clip((g1 @ g2) / (n1 * n2), -1.0, 1.0))


def fbgrad_project(g1, g2) -> np.ndarray:
    """Remove from ``g1`` its component along a conflicting ``g2``."""
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    dot = float(g1.ravel() @ g2.ravel())
    if not dot < 0:
        raise ContractError("fbgrad_project called on non-conflicting gradients")
    return g1 - (dot / float(g2.ravel() @ g2.ravel())) * g2


def _pair_records(epoch, depth, tasks, flats, kind, corrected):
    out = []
    for i, a in enumerate(tasks):
        for b in tasks[i + 1 :]:
            ga, gb = flats[a], flats[b]
            if detect_conflict(ga, gb):
                cos = conflict_cosine(ga, gb)
                if cos is not None:
                    out.append(ConflictRecord(epoch, depth, a, b, kind, cos, corrected))
    return out


def fbgrad_pass(
    top: Topology,
    grads: GradientSet,
    lambdas: Sequence[float],
    epoch: int,
    rng: np.random.Generator | None = None,
    *,
    correct: bool = True,
    fixed_order: bool = False,
) -> tuple[GradientSet, list[ConflictRecord]]:
    """Project conflicting fairness gradients on branch layers.

    On every branch layer (depth in ``d_c+1..d``) shared by at least two
    tasks with a positive fairness weight, each task's fairness gradient is
    projected against every other task's *original* gradient it conflicts
    with; tasks and opponents are visited in a seeded random order unless
    ``fixed_order``.  Shared layers and heads are never modified, nor are
    accuracy gradients.

    Accuracy conflicts are logged on every multi-task layer; fairness
    conflicts are logged on every multi-task layer among tasks with a
    positive weight, flagged ``corrected`` where projection applies.
    With ``correct=False`` the pass only logs.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    fair = [dict(f) for f in grads.fair]
    records: list[ConflictRecord] = []
    for layer in top.iter_layers():
        if len(layer.tasks) < 2:
            continue
        key = layer.key
        acc_flat = {t: grads.flat(t, key, "acc") for t in layer.tasks}
        records += _pair_records(epoch, layer.depth, layer.tasks, acc_flat, ACCURACY, False)

        active = [t for t in layer.tasks if lambdas[t] > 0]
        if len(active) < 2:
            continue
        fixes = correct and top.is_branch(layer)
        orig = {t: grads.flat(t, key, "fair") for t in active}
        records += _pair_records(epoch, layer.depth, tuple(active), orig, FAIRNESS, fixes)
        if not fixes:
            continue

        order = list(active) if fixed_order else [active[i] for i in rng.permutation(len(active))]
        for t in order:
            work = orig[t]
            changed = False
            others = [u for u in order if u != t]
            if not fixed_order:
                others = [others[i] for i in rng.permutation(len(others))]
            for u in others:
                if detect_conflict(work, orig[u]):
                    work = fbgrad_project(work, orig[u])
                    changed = True
            if changed:
                dW, _ = grads.fair[t][key]
                fair[t][key] = (work[: dW.size].reshape(dW.shape), work[dW.size :])
    return grads.with_fair(fair), records

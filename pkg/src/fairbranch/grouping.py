"""Parameter similarity and greedy pairing of task groups.

Similarity between two groups is linear centered kernel alignment of the
Gram matrices ``K = W W^T`` of their weight matrices at a common depth
(biases are left out).  Pairs whose similarity reaches ``tau`` enter an
affinity table, and groups are then matched greedily, best pair first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, ShapeError

GroupKey = frozenset


@dataclass(frozen=True)
class TaskGroup:
    members: frozenset
    children: tuple = ()
    formed_at_depth: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))
        if not self.members:
            raise ValueError("a task group needs at least one member")

    @property
    def sort_key(self) -> tuple[int, ...]:
        return tuple(sorted(self.members))

    def to_dict(self) -> dict:
        out = {"members": list(self.sort_key)}
        if self.children:
            out["children"] = [c.to_dict() for c in self.children]
        if self.formed_at_depth is not None:
            out["formed_at_depth"] = self.formed_at_depth
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TaskGroup":
        return cls(
            frozenset(d["members"]),
            tuple(cls.from_dict(c) for c in d.get("children", ())),
            d.get("formed_at_depth"),
        )


def singletons(n_tasks: int) -> list[TaskGroup]:
    return [TaskGroup(frozenset({t})) for t in range(n_tasks)]


def center_gram(K) -> np.ndarray:
    """``H K H`` with ``H = I - 11^T / n``."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {K.shape}")
    # subtracting row and column means is H K H without forming H
    Kc = K - K.mean(axis=0, keepdims=True)
    return Kc - Kc.mean(axis=1, keepdims=True)


def linear_cka(theta_a, theta_b) -> float:
    """Centered kernel alignment of ``theta_a theta_a^T`` and ``theta_b theta_b^T``.

    Returns 0 when either centered Gram matrix is (numerically) zero.
    """
    A = np.atleast_2d(np.asarray(theta_a, dtype=np.float64))
    B = np.atleast_2d(np.asarray(theta_b, dtype=np.float64))
    if A.shape[0] != B.shape[0]:
        raise ShapeError(f"row dimensions differ: {A.shape[0]} vs {B.shape[0]}")
    Ka = center_gram(A @ A.T)
    Kb = center_gram(B @ B.T)
    # tr(X Y) for symmetric X, Y is the elementwise inner product
    aa = float(np.sum(Ka * Ka))
    bb = float(np.sum(Kb * Kb))
    if np.sqrt(aa) < 1e-12 or np.sqrt(bb) < 1e-12:
        return 0.0
    ab = float(np.sum(Ka * Kb))
    return float(np.clip(ab / np.sqrt(aa * bb), 0.0, 1.0))


@dataclass
class AffinityTable:
    """Group pairs with similarity at least ``tau``, keyed by ordered group pair."""

    tau: float
    entries: dict = field(default_factory=dict)

    def items(self):
        return self.entries.items()

    def __len__(self):
        return len(self.entries)


def _ordered(a: GroupKey, b: GroupKey) -> tuple[GroupKey, GroupKey]:
    return (a, b) if min(a) < min(b) else (b, a)


def affinity_set(groups: Sequence[TaskGroup], params: Mapping[GroupKey, np.ndarray], tau: float) -> AffinityTable:
    """Pairs of groups whose parameter similarity is at least ``tau``.

    ``params`` maps each group's member set to its weight matrix one depth
    above the one being branched.
    """
    if not 0 < tau <= 1:
        raise ConfigurationError(f"tau must lie in (0, 1], got {tau}")
    keys = [g.members for g in groups]
    table = AffinityTable(tau)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            v = linear_cka(params[keys[i]], params[keys[j]])
            if v >= tau:
                table.entries[_ordered(keys[i], keys[j])] = v
    return table


def slhc_pair(groups: Sequence[TaskGroup], table: AffinityTable) -> list[tuple[GroupKey, GroupKey]]:
    """Greedy matching: take the most similar remaining pair, drop every entry
    touching either member, repeat until the table is empty.

    Ties go to the pair whose first group has the smallest task id, then the
    second group's smallest id.
    """
    remaining = dict(table.entries)
    pairs = []
    while remaining:
        a, b = min(remaining, key=lambda k: (-remaining[k], min(k[0]), min(k[1])))
        pairs.append((a, b))
        remaining = {k: v for k, v in remaining.items() if not ({a, b} & set(k))}
    return pairs


def update_task_groups(
    groups: Sequence[TaskGroup],
    pairs: Iterable[tuple[GroupKey, GroupKey]],
    depth: int | None = None,
) -> list[TaskGroup]:
    """Merge each matched pair into a new group; carry the rest over unchanged."""
    by_key = {g.members: g for g in groups}
    used: set = set()
    merged = []
    for a, b in pairs:
        if a in used or b in used or a == b:
            raise ContractError("pairs must form a matching over the task groups")
        if a not in by_key or b not in by_key:
            raise ContractError("pair refers to a group that is not in TG")
        used |= {a, b}
        ga, gb = sorted((by_key[a], by_key[b]), key=lambda g: g.sort_key)
        merged.append(TaskGroup(a | b, (ga, gb), depth))
    out = merged + [g for g in groups if g.members not in used]
    return sorted(out, key=lambda g: g.sort_key)

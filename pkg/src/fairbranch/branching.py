"""Structural rewrite at a branching event.

The shared layer at depth ``d_c`` is replaced by one bit-exact replica per
task group; each replica consumes the shared layer below and feeds the
depth ``d_c + 1`` layers whose task sets it contains.  Because the replicas
start as copies, the network computes exactly the same function right
after the event.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

from .errors import TopologyError
from .grouping import TaskGroup, affinity_set, slhc_pair, update_task_groups
from .network import Topology


@dataclass(frozen=True)
class Schedule:
    warm_up: int = 5
    interval: int = 5
    literal_mode: bool = False
    branch_only_on_merge: bool = False

    def admits(self, epoch: int) -> bool:
        if self.literal_mode:
            return True
        return epoch >= self.warm_up and (epoch - self.warm_up) % max(self.interval, 1) == 0


@dataclass
class BranchEvent:
    epoch: int
    d_c_before: int
    groups: list[list[int]]
    pairs: list[list[list[int]]] = field(default_factory=list)
    affinities: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BranchEvent":
        return cls(**d)


def branch_condition(groups: Sequence[TaskGroup], d_c: int, epoch: int, schedule: Schedule) -> bool:
    return len(groups) >= 2 and d_c > 1 and schedule.admits(epoch)


def form_branches(top: Topology, groups: Sequence[TaskGroup]) -> Topology:
    """Replace the shared layer at ``d_c`` by one replica per group (in place)."""
    b = top.d_c
    if b < 1:
        raise TopologyError("no shared layer left to branch")
    shared = top.layers_at(b)
    if len(shared) != 1:
        raise TopologyError(f"depth {b} does not hold a single shared layer")
    src = shared[0]
    top.hidden[b - 1] = [src.replica(g.members) for g in sorted(groups, key=lambda g: g.sort_key)]
    top.d_c = b - 1
    top.validate()
    return top


def group_parameters(top: Topology, groups: Sequence[TaskGroup]) -> dict:
    """Weight matrix owned by each group one depth above ``d_c``."""
    out = {}
    for g in groups:
        layer = top.get((top.d_c + 1, tuple(sorted(g.members))))
        out[g.members] = layer.weights
    return out


def branch_event(
    top: Topology,
    groups: Sequence[TaskGroup],
    tau: float,
    epoch: int,
    schedule: Schedule = Schedule(),
) -> tuple[list[TaskGroup], BranchEvent | None]:
    """Affinity, pairing, group update and branch formation for one epoch.

    Returns the (possibly unchanged) groups and the recorded event, or
    ``None`` when nothing happened.
    """
    if not branch_condition(groups, top.d_c, epoch, schedule):
        return list(groups), None
    table = affinity_set(groups, group_parameters(top, groups), tau)
    pairs = slhc_pair(groups, table)
    if not pairs and schedule.branch_only_on_merge:
        return list(groups), None
    d_c_before = top.d_c
    new_groups = update_task_groups(groups, pairs, d_c_before)
    form_branches(top, new_groups)
    event = BranchEvent(
        epoch=epoch,
        d_c_before=d_c_before,
        groups=[list(g.sort_key) for g in new_groups],
        pairs=[[sorted(a), sorted(b)] for a, b in pairs],
        affinities=[
            {"a": sorted(a), "b": sorted(b), "similarity": v}
            for (a, b), v in sorted(table.items(), key=lambda kv: (min(kv[0][0]), min(kv[0][1])))
        ],
    )
    top.events.append(event)
    return new_groups, event

import numpy as np
import pytest

from fairbranch.branching import (
    BranchEvent,
    Schedule,
    branch_condition,
    branch_event,
    form_branches,
)
from fairbranch.errors import TopologyError
from fairbranch.grouping import TaskGroup, singletons
from fairbranch.network import forward, init_model, parameter_count


def fs(*xs):
    return frozenset(xs)


@pytest.mark.parametrize(
    "n_groups, d_c, epoch, expected",
    [(3, 2, 5, True), (1, 2, 5, False), (3, 1, 5, False), (3, 2, 4, False), (3, 2, 7, False), (3, 2, 10, True)],
)
def test_branch_condition(n_groups, d_c, epoch, expected):
    groups = singletons(n_groups)
    assert branch_condition(groups, d_c, epoch, Schedule(5, 5)) is expected


def test_literal_schedule_admits_every_epoch():
    assert all(Schedule(literal_mode=True).admits(e) for e in range(1, 20))


def test_form_branches_is_forward_invariant():
    rng = np.random.default_rng(0)
    top = init_model(6, [8, 8, 8, 8], 4, seed=0, shared_head_init=False)
    for layer in top.iter_layers():
        layer.bias += rng.standard_normal(layer.bias.shape)
    X = rng.standard_normal((256, 6))
    partitions = [
        [fs(0, 1), fs(2), fs(3)],
        [fs(0, 1), fs(2, 3)],
        [fs(0, 1, 2, 3)],
    ]
    for members in partitions:
        before = forward(top, X).raw.copy()
        form_branches(top, [TaskGroup(m) for m in members])
        assert np.abs(forward(top, X).raw - before).max() < 1e-12
    assert top.d_c == 1


def test_replicas_are_independent_copies():
    top = init_model(3, [4, 4, 4], 2, seed=1)
    src = top.layers_at(3)[0]
    form_branches(top, singletons(2))
    a, b = top.layers_at(3)
    assert np.array_equal(a.weights, src.weights) and a.weights is not b.weights
    a.weights[0, 0] += 1
    assert b.weights[0, 0] == src.weights[0, 0]


def test_parameter_accounting():
    top = init_model(5, [6, 6, 6], 4, seed=0)
    size = top.layers_at(3)[0].size
    before = parameter_count(top)
    form_branches(top, [TaskGroup(fs(0, 1)), TaskGroup(fs(2)), TaskGroup(fs(3))])
    assert parameter_count(top) == before + 2 * size


def test_cannot_branch_below_input():
    top = init_model(3, [4, 4], 2, seed=0)
    form_branches(top, singletons(2))
    form_branches(top, singletons(2))
    with pytest.raises(TopologyError):
        form_branches(top, singletons(2))


def _family_model(seed=0):
    """Four tasks whose top hidden layer is identical within {0,1} and {2,3}."""
    top = init_model(4, [6, 6, 6], 4, seed=seed, shared_head_init=False)
    form_branches(top, singletons(4))  # depth 3 now per task
    rng = np.random.default_rng(seed)
    base = [rng.standard_normal((6, 6)) for _ in range(2)]
    for t, layer in enumerate(top.layers_at(3)):
        layer.weights[:] = base[t // 2] + 1e-3 * rng.standard_normal((6, 6))
    return top


def test_event_pairs_families_then_stops_at_depth_one():
    top = _family_model()
    groups, ev = branch_event(top, singletons(4), tau=0.9, epoch=5, schedule=Schedule(5, 5))
    assert sorted(ev.pairs) == [[[0], [1]], [[2], [3]]]
    assert [sorted(g.members) for g in groups] == [[0, 1], [2, 3]]
    assert top.d_c == 1 and len(top.layers_at(2)) == 2
    top.validate()
    # no further event while d_c == 1
    groups2, ev2 = branch_event(top, groups, tau=0.1, epoch=10, schedule=Schedule(5, 5))
    assert ev2 is None and groups2 == groups
    assert [e.epoch for e in top.events] == [5]
    assert BranchEvent.from_dict(ev.to_dict()) == ev


def test_event_without_pairs_still_branches_by_default():
    top = _family_model(3)
    groups, ev = branch_event(top, singletons(4), tau=1.0, epoch=5)
    assert ev is not None and ev.pairs == [] and len(groups) == 4
    assert top.d_c == 1


def test_branch_only_on_merge():
    top = _family_model(3)
    d_c = top.d_c
    groups, ev = branch_event(top, singletons(4), tau=1.0, epoch=5, schedule=Schedule(branch_only_on_merge=True))
    assert ev is None and top.d_c == d_c and not top.events


def test_single_task_never_branches():
    top = init_model(3, [4, 4, 4], 1, seed=0)
    groups, ev = branch_event(top, singletons(1), 0.5, 5)
    assert ev is None and top.d_c == 3

import json

import numpy as np
import pytest

from fairbranch.branching import Schedule
from fairbranch.data import SplitSpec, SyntheticSpec, generate_synthetic, stratified_split
from fairbranch.errors import ConfigurationError
from fairbranch.network import predict_proba
from fairbranch.trainer import (
    Convergence,
    TrainConfig,
    convergence_check,
    train_fairbranch,
    train_stl,
    train_vanilla_mtl,
)


@pytest.fixture(scope="module")
def small():
    d = generate_synthetic(SyntheticSpec(1200, 6, 4, 2, bias_strength=0.2, noise=0.0, seed=3))
    return stratified_split(d, SplitSpec(0.75, seed=3))


FAST = TrainConfig(hidden_widths=(8, 8, 8), batch_size=64, max_epochs=12, schedule=Schedule(2, 2), seed=1)


def _params(top):
    return [(l.key, l.weights, l.bias) for l in top.iter_layers()]


@pytest.mark.parametrize(
    "history, expected",
    [
        ([1.0], False),
        ([1.0, 0.99995, 0.99994], True),  # patience 2: neither step beats 1e-4 relative
        ([1.0, 0.9, 0.8], False),
        ([1.0, 1.1, 1.2, 0.5], False),
    ],
)
def test_convergence_check(history, expected):
    assert convergence_check(history, 1e-4, 2) is expected


def test_convergence_check_empty():
    with pytest.raises(ValueError):
        convergence_check([])


def test_config_round_trip_and_validation(tmp_path):
    cfg = FAST.with_(tau=0.4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.from_json(path) == cfg
    with pytest.raises(ConfigurationError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    for bad in ({"tau": 0}, {"eta": 0}, {"conflict_sampling": "x"}, {"convergence": Convergence(patience=0)}):
        with pytest.raises(ConfigurationError):
            FAST.with_(**bad)


def test_zero_epochs_returns_initial_model(small):
    rep = train_fairbranch(*small, FAST.with_(max_epochs=0))
    assert rep.epochs_run == 0 and rep.history == [] and rep.events == []


def test_single_task_run_never_branches(small):
    tr, va = small
    rep = train_fairbranch(tr.select_tasks([0]), va.select_tasks([0]), FAST)
    assert rep.events == [] and rep.topology.d_c == 3


def test_fairbranch_equals_vanilla_before_warm_up(small):
    cfg = FAST.with_(max_epochs=4, schedule=Schedule(5, 5))
    fb = train_fairbranch(*small, cfg)
    vm = train_vanilla_mtl(*small, cfg)
    for (ka, wa, ba), (kb, wb, bb) in zip(_params(fb.topology), _params(vm.topology)):
        assert ka == kb
        np.testing.assert_allclose(wa, wb, rtol=0, atol=1e-10)
        np.testing.assert_allclose(ba, bb, rtol=0, atol=1e-10)
    assert fb.conflicts == vm.conflicts


def test_fairbranch_branches_and_keeps_tasks_on_paths(small):
    rep = train_fairbranch(*small, FAST)
    assert rep.events and rep.topology.d_c < 3
    rep.topology.validate()
    assert sorted(t for g in rep.groups for t in g.members) == [0, 1, 2, 3]
    assert all(r.epoch >= 1 for r in rep.conflicts)


def test_training_is_deterministic(small):
    a = train_fairbranch(*small, FAST)
    b = train_fairbranch(*small, FAST)
    assert a.to_dict() == b.to_dict() and a.conflicts == b.conflicts
    for (_, wa, _), (_, wb, _) in zip(_params(a.topology), _params(b.topology)):
        assert np.array_equal(wa, wb)


def test_zero_fairness_weight(small):
    rep = train_vanilla_mtl(*small, FAST.with_(lambda_default=0.0, max_epochs=3))
    assert len(rep.history) == 3


def test_stl_learns_a_clean_task():
    d = generate_synthetic(SyntheticSpec(3000, 6, 2, 1, noise=0.0, seed=0))
    tr, va = stratified_split(d, SplitSpec(0.7, seed=0))
    rep = train_stl(tr, va, 0, TrainConfig(hidden_widths=(16, 16), max_epochs=40, batch_size=64, seed=0))
    acc = np.mean((predict_proba(rep.topology, va.features)[:, 0] >= 0.5) == va.labels[:, 0])
    assert acc > 0.9
    with pytest.raises(ConfigurationError):
        train_stl(tr, va, 5, FAST)


def test_validation_history_is_recorded(small):
    rep = train_vanilla_mtl(*small, FAST.with_(max_epochs=5))
    totals = [h.val_total for h in rep.history]
    assert len(totals) == rep.epochs_run == 5
    assert totals[-1] < totals[0]

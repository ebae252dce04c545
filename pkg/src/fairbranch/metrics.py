"""Accuracy, group-fairness violations, transfer scores and conflict reports."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conflict import ACCURACY, FAIRNESS, ConflictRecord
from .data import Dataset
from .errors import UndefinedMetricError
from .network import Topology, predict_proba

THRESHOLD = 0.5
KINDS = ("EP", "EO", "EO_literal")


def _rate(pred, mask, what: str) -> float:
    k = int(mask.sum())
    if k == 0:
        raise UndefinedMetricError(f"empty conditioning cell: {what}")
    return float(pred[mask].sum()) / k


def fairness_violation(pred, y, s, kind: str = "EP") -> float:
    """Group gap in positive-prediction rates under the chosen conditions.

    EP: true-positive-rate gap.  EO: TPR gap plus false-positive-rate gap.
    EO_literal: gaps in P(pred=1 | y=1) and P(pred=0 | y=1), which is always
    twice EP.
    """
    pred = np.asarray(pred).astype(np.int64)
    y = np.asarray(y)
    s = np.asarray(s)
    if kind not in KINDS:
        raise ValueError(f"unknown fairness kind {kind!r}")

    def gap(cls: int, positive: bool = True) -> float:
        p = pred if positive else 1 - pred
        r0 = _rate(p, (y == cls) & (s == 0), f"y={cls}, s=0")
        r1 = _rate(p, (y == cls) & (s == 1), f"y={cls}, s=1")
        return abs(r0 - r1)

    if kind == "EP":
        return gap(1)
    if kind == "EO":
        return gap(1) + gap(0)
    return gap(1) + gap(1, positive=False)


def knowledge_gain(mtl_acc: float, stl_acc: float) -> float:
    """Negative values mean negative transfer."""
    return mtl_acc - stl_acc


def discrimination_gain(mtl_viol: float, stl_viol: float) -> float:
    """Positive values mean bias transfer."""
    return mtl_viol - stl_viol


@dataclass
class TaskScores:
    name: str
    accuracy: float
    ep_viol: float
    eo_viol: float
    stl_accuracy: float
    stl_ep_viol: float
    stl_eo_viol: float
    kg: float
    dg_ep: float
    dg_eo: float

    @property
    def negative_transfer(self) -> bool:
        return self.kg < 0

    @property
    def bias_transfer(self) -> bool:
        return self.dg_ep > 0 or self.dg_eo > 0


@dataclass
class EvalResult:
    tasks: list[TaskScores]

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(t, attr) for t in self.tasks]))

    @property
    def mean_accuracy(self):
        return self._mean("accuracy")

    @property
    def mean_kg(self):
        return self._mean("kg")

    @property
    def mean_dg_ep(self):
        return self._mean("dg_ep")

    @property
    def mean_dg_eo(self):
        return self._mean("dg_eo")

    def summary(self) -> dict:
        return {
            "accuracy": self.mean_accuracy,
            "ep_viol": self._mean("ep_viol"),
            "eo_viol": self._mean("eo_viol"),
            "kg": self.mean_kg,
            "dg_ep": self.mean_dg_ep,
            "dg_eo": self.mean_dg_eo,
        }

    def to_dict(self) -> dict:
        return {"tasks": [asdict(t) for t in self.tasks], "mean": self.summary()}

    def rows(self) -> tuple[list[str], list[list]]:
        cols = list(asdict(self.tasks[0]).keys()) if self.tasks else ["name"]
        return cols, [list(asdict(t).values()) for t in self.tasks]


def task_scores(prob, y, s) -> tuple[float, float, float]:
    pred = (np.asarray(prob) >= THRESHOLD).astype(np.int64)
    y = np.asarray(y)
    return (
        float(np.mean(pred == y)),
        fairness_violation(pred, y, s, "EP"),
        fairness_violation(pred, y, s, "EO"),
    )


def _baseline_probs(model: Topology, X, name: str) -> np.ndarray:
    probs = predict_proba(model, X)
    if model.n_tasks == 1:
        return probs[:, 0]
    return probs[:, model.task_names.index(name)]


def evaluate(top: Topology, dataset: Dataset, baselines: Mapping[str, Topology]) -> EvalResult:
    """Score every task of ``top`` against its single-task baseline.

    ``baselines`` maps a task name to a model holding that task; a
    single-head model is read through its only head.
    """
    missing = [n for n in dataset.task_names if n not in baselines]
    if missing:
        raise KeyError(f"no baseline for task(s): {', '.join(missing)}")
    probs = predict_proba(top, dataset.features)
    s = dataset.protected
    out = []
    for t, name in enumerate(dataset.task_names):
        y = dataset.labels[:, t]
        col = top.task_names.index(name) if name in top.task_names else t
        acc, ep, eo = task_scores(probs[:, col], y, s)
        b_acc, b_ep, b_eo = task_scores(_baseline_probs(baselines[name], dataset.features, name), y, s)
        out.append(
            TaskScores(
                name, acc, ep, eo, b_acc, b_ep, b_eo,
                knowledge_gain(acc, b_acc),
                discrimination_gain(ep, b_ep),
                discrimination_gain(eo, b_eo),
            )
        )
    return EvalResult(out)


# ---------------------------------------------------------------------------
# conflict reports


def heatmaps(records: Iterable[ConflictRecord], n_tasks: int) -> dict[str, np.ndarray]:
    """Symmetric T x T conflict counts per kind, accumulated over the log."""
    mats = {ACCURACY: np.zeros((n_tasks, n_tasks), dtype=np.int64),
            FAIRNESS: np.zeros((n_tasks, n_tasks), dtype=np.int64)}
    for r in records:
        m = mats[r.kind]
        m[r.task_a, r.task_b] += 1
        m[r.task_b, r.task_a] += 1
    return mats


def angle_summary(records: Iterable[ConflictRecord]) -> list[dict]:
    """Per epoch and kind: count and quartiles of the conflict angle in degrees."""
    buckets = defaultdict(list)
    for r in records:
        buckets[(r.epoch, r.kind)].append(np.degrees(np.arccos(r.cosine)))
    rows = []
    for (epoch, kind), angles in sorted(buckets.items()):
        q1, q2, q3 = np.percentile(angles, [25, 50, 75])
        rows.append({"epoch": epoch, "kind": kind, "count": len(angles),
                     "q1_deg": float(q1), "median_deg": float(q2), "q3_deg": float(q3)})
    return rows


def write_conflicts_csv(records: Sequence[ConflictRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ConflictRecord.columns())
        for r in records:
            w.writerow([r.epoch, r.depth, r.task_a, r.task_b, r.kind, repr(r.cosine), int(r.corrected)])


def read_conflicts_csv(path) -> list[ConflictRecord]:
    with Path(path).open(newline="") as fh:
        return [
            ConflictRecord(int(r["epoch"]), int(r["depth"]), int(r["task_a"]), int(r["task_b"]),
                           r["kind"], float(r["cosine"]), bool(int(r["corrected"])))
            for r in csv.DictReader(fh)
        ]


def conflict_report(records: Sequence[ConflictRecord], task_names: Sequence[str], out_dir) -> list[Path]:
    """Write conflicts.csv, angles.csv and heatmap_{accuracy,fairness}.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "conflicts.csv", out_dir / "angles.csv"]
    write_conflicts_csv(records, written[0])

    cols = ["epoch", "kind", "count", "q1_deg", "median_deg", "q3_deg"]
    with written[1].open("w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(angle_summary(records))

    for kind, mat in heatmaps(records, len(task_names)).items():
        path = out_dir / f"heatmap_{kind}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", *task_names])
            for name, row in zip(task_names, mat):
                w.writerow([name, *row.tolist()])
        written.append(path)
    return written

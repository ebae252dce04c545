"""
Where do the gradients fight?
=============================

Train once with every batch logged, then summarise accuracy and fairness
conflicts per task pair and the spread of conflict angles over epochs.
"""

import tempfile
from pathlib import Path

from fairbranch import SplitSpec, SyntheticSpec, TrainConfig, generate_synthetic, stratified_split, train_fairbranch
from fairbranch.metrics import angle_summary, conflict_report, heatmaps

data = generate_synthetic(SyntheticSpec(4000, 8, 4, 2, bias_strength=0.3, seed=2))
train, val = stratified_split(data, SplitSpec(0.7, seed=2))
report = train_fairbranch(train, val, TrainConfig(max_epochs=20, conflict_sampling="all", seed=2))
print(len(report.conflicts), "conflicts logged;", len(report.events), "branch events")

# symmetric count matrices, one per conflict kind
for kind, counts in heatmaps(report.conflicts, data.n_tasks).items():
    print(kind)
    print(counts)

# median angle per epoch for fairness conflicts (90 degrees means orthogonal)
for row in angle_summary(report.conflicts):
    if row["kind"] == "fairness":
        print(f"epoch {row['epoch']:2d}: {row['count']:4d} conflicts, median {row['median_deg']:.1f} deg")

# the same tables as plot-ready CSV files
out = Path(tempfile.mkdtemp())
for path in conflict_report(report.conflicts, data.task_names, out):
    print("wrote", path)

"""
Knowledge gain and discrimination gain
======================================

Odd tasks carry label bias against group s=1.  We compare a shared-trunk
multi-task net with the branching learner, both measured against one
single-task net per task.  Negative KG means negative transfer; positive DG
means bias transfer.
"""

from fairbranch import SplitSpec, SyntheticSpec, TrainConfig, evaluate, generate_synthetic, stratified_split
from fairbranch.trainer import train_fairbranch, train_stls, train_vanilla_mtl

data = generate_synthetic(SyntheticSpec(10000, 10, 6, 2, bias_strength=0.3, noise=0.05, seed=1))
train, rest = stratified_split(data, SplitSpec(0.7, seed=1))
val, test = stratified_split(rest, SplitSpec(0.5, seed=1))
cfg = TrainConfig(max_epochs=40, seed=1)

# baselines: one network per task
stl = {name: rep.topology for name, rep in train_stls(train, val, cfg).items()}

for label, trainer in (("vanilla", train_vanilla_mtl), ("branching", train_fairbranch)):
    result = evaluate(trainer(train, val, cfg).topology, test, stl)
    print(f"{label:>9}: mean KG {result.mean_kg:+.4f}  mean DG(EP) {result.mean_dg_ep:+.4f}")
    for t in result.tasks:
        flag = " biased" if data.task_meta[t.name]["biased"] else ""
        print(f"    {t.name}{flag:8} acc {t.accuracy:.3f}  KG {t.kg:+.4f}  DG(EP) {t.dg_ep:+.4f}")

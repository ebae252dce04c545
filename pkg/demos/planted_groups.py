"""
Recovering planted task families
=================================

Six tasks are drawn from three latent families.  After a short warm-up the
task heads of one family look alike, and the first branching event pairs them.
"""

import numpy as np

from fairbranch import SplitSpec, SyntheticSpec, TrainConfig, generate_synthetic, stratified_split, train_fairbranch

# families are t % 3, so {t0, t3}, {t1, t4} and {t2, t5} belong together
data = generate_synthetic(SyntheticSpec(20000, 10, 6, 3, noise=0.05, seed=0))
train, val = stratified_split(data, SplitSpec(0.7, seed=0))

# five epochs is exactly the warm-up, so training stops right after the first event
report = train_fairbranch(train, val, TrainConfig(tau=0.7, max_epochs=5, seed=0))
event = report.events[0]
print("pairs formed:", event.pairs)

# the affinity table behind the pairing
names = data.task_names
sim = np.full((6, 6), np.nan)
for row in event.affinities:
    a, b = row["a"][0], row["b"][0]
    sim[a, b] = sim[b, a] = row["similarity"]
print("similarities above tau:")
for t in range(6):
    print(f"  {names[t]}", " ".join("   .  " if np.isnan(v) else f"{v:6.3f}" for v in sim[t]))

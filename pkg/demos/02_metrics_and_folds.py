"""
Scoring predictions and planning folds
======================================

Weighted metrics from a confusion matrix, fold averaging, and a
stratified nested split.
"""

import numpy as np

from kuridiom.dataset import SyntheticSpec, generate_synthetic, stratified_nested_folds
from kuridiom.evaluation import confusion, fold_table, metrics

labels = np.array([0, 0, 0, 0, 1, 1, 2, 2])
preds = np.array([0, 0, 0, 1, 1, 1, 2, 0])
cm = confusion(preds, labels, 3)
print(cm)

weighted = metrics(cm)
macro = metrics(cm, average="macro")
print("weighted", weighted.values())
print("macro   ", macro.values())

# class 2 never gets predicted here, so its precision is 0 and it is flagged
print(metrics(confusion([0, 0, 1, 1], [0, 2, 1, 2], 3)).never_predicted)

# rows per fold, average last; values render half-up to two places
rng = np.random.default_rng(0)
rows = []
for _ in range(5):
    y = rng.integers(0, 4, 200)
    guess = np.where(rng.random(200) < 0.9, y, rng.integers(0, 4, 200))
    rows.append(metrics(confusion(guess, y, 4)))
print(fold_table(rows))

# every class spread evenly over test folds, validation carved from the rest
ds = generate_synthetic(SyntheticSpec(4, 10, 3, 30, seed=2))
plan = stratified_nested_folds(ds, k=5, seed=0)
for f in range(plan.k):
    sizes = {r: len(plan.indices(f, r)) for r in ("train", "validation", "test")}
    per_class = np.bincount(ds.labels[plan.indices(f, "test")], minlength=ds.num_classes)
    print(f, sizes, per_class)

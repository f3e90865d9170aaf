"""
Three classifiers on one fold
=============================

Transformer, RCNN and BiLSTM with attention, trained with the small
"desk" sizes on a synthetic idiom set. A few seconds each.
"""

import time

from kuridiom.dataset import SyntheticSpec, generate_synthetic, stratified_nested_folds
from kuridiom.evaluation import MODEL_TITLES, fmt
from kuridiom.models import KINDS
from kuridiom.training import TrainConfig, train_fold

ds = generate_synthetic(SyntheticSpec(3, 12, 3, 40, seed=1))
plan = stratified_nested_folds(ds, k=5, seed=0)
print(len(ds), "sentences,", ds.num_classes, "classes")

for kind in KINDS:
    cfg = TrainConfig(kind, preset="desk", epochs=15, eval_every=3, vocab_size=600)
    start = time.perf_counter()
    rec = train_fold(ds, plan, 0, cfg)
    print(f"\n{MODEL_TITLES[kind]}  ({time.perf_counter() - start:.0f}s)")
    # loss per epoch, then validation accuracy every few epochs
    print("  loss", " ".join(f"{x:.3f}" for x in rec.losses))
    print("  val ", " ".join(f"e{v['epoch']}:{fmt(v['metrics']['accuracy'])}" for v in rec.validation))
    print("  test", {m: fmt(rec.test[m]) for m in ("accuracy", "precision", "recall", "f1")})

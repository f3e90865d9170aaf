"""
Cross-validation through the command line
=========================================

The same steps a shell user would run, driven in-process: generate data,
validate it, run k-fold training, then classify a sentence with the
best checkpoint of one fold.
"""

import json
import sys
import tempfile
from pathlib import Path

from kuridiom.cli import main

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="kuridiom_"))
work.mkdir(parents=True, exist_ok=True)
data = work / "idioms.tsv"


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        raise SystemExit(f"{argv[0]} exited with {code}")


run("gen-data", "--idioms", 3, "--contexts", 10, "--variants", 3, "--non-idiom", 40, "--seed", 0, "--out", data)
run("validate", "--data", data)

# three folds, fifteen epochs; vocabulary is learned per fold from train + validation
run("cv", "--model", "transformer", "--preset", "desk", "--data", data, "--k", 3, "--seed", 0,
    "--epochs", 15, "--eval-every", 3, "--vocab-size", 500, "--out", work / "cv")

print((work / "cv" / "report" / "transformer_folds.txt").read_text(encoding="utf-8"))
print((work / "cv" / "report" / "durations.txt").read_text(encoding="utf-8"))

fold = work / "cv" / "fold0"
sentence = data.read_text(encoding="utf-8").splitlines()[1].split("\t")[1]
print(sentence)
run("classify", "--checkpoint", fold / "best.ckpt", "--vocab", fold / "vocab.txt", "--text", sentence)

record = json.loads((fold / "record.json").read_text())
print("best epoch", record["best_epoch"], "of", len(record["losses"]))
print("outputs in", work)

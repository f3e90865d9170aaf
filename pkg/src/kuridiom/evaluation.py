"""Confusion matrices, weighted/macro metrics, fold averages and report files."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")
COLUMN_TITLES = ("Accuracy (%)", "Precision (%)", "Recall (%)", "F1-Score (%)")
MODEL_TITLES = {
    "transformer": "Transformer",
    "rcnn": "RCNN",
    "bilstm_attn": "BiLSTM with Attention",
}


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"{len(preds)} predictions but {len(labels)} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        bad = (arr < 0) | (arr >= num_classes)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"{name} {arr[i]} at index {i} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass(frozen=True)
class MetricsRow:
    """Percentages in [0, 100], kept at full precision."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    # classes that have support but were never predicted (precision set to 0)
    never_predicted: tuple = field(default=(), compare=False)

    def values(self):
        return tuple(getattr(self, m) for m in METRIC_NAMES)

    def to_dict(self):
        d = asdict(self)
        d["never_predicted"] = list(self.never_predicted)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(*(float(d[m]) for m in METRIC_NAMES), tuple(d.get("never_predicted", ())))


def per_class(cm):
    """Per-class precision, recall, f1 and support as fractions."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1, support


def metrics(cm, average: str = "weighted") -> MetricsRow:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    precision, recall, f1, support = per_class(cm)
    present = support > 0
    if average == "weighted":
        w = support / support.sum()
    elif average == "macro":
        w = present / present.sum()
    else:
        raise ValueError(f"unknown average {average!r}; expected 'weighted' or 'macro'")
    missing = tuple(int(c) for c in np.flatnonzero(present & (cm.sum(axis=0) == 0)))
    accuracy = float(np.trace(cm)) / float(total)
    if average == "weighted":
        # support * tp / support is tp; summing tp directly avoids rounding
        recall_avg = accuracy
    else:
        recall_avg = float(w @ recall)
    return MetricsRow(
        accuracy=100.0 * accuracy,
        precision=100.0 * float(w @ precision),
        recall=100.0 * recall_avg,
        f1=100.0 * float(w @ f1),
        never_predicted=missing,
    )


def evaluate(preds, labels, num_classes, average="weighted") -> MetricsRow:
    return metrics(confusion(preds, labels, num_classes), average)


def aggregate_folds(rows) -> MetricsRow:
    """Unweighted mean of each metric over folds."""
    rows = list(rows)
    if not rows:
        raise ValueError("need at least one fold row to aggregate")
    # fsum keeps the result independent of input order
    n = len(rows)
    means = [math.fsum(getattr(r, m) for r in rows) / n for m in METRIC_NAMES]
    return MetricsRow(*means)


def fmt(value: float, places: int = 2) -> str:
    """Half-up rounding of the value's shortest decimal form, '.' separator."""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def format_duration(seconds: float) -> str:
    minutes = int(Decimal(repr(float(seconds))) / 60)
    hours, minutes = divmod(minutes, 60)
    parts = []
    if hours:
        parts.append(f"{hours} hr" if hours == 1 else f"{hours} hrs")
    if minutes or not hours:
        parts.append(f"{minutes} min" if minutes == 1 else f"{minutes} mins")
    return " ".join(parts)


def text_table(header, rows) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = []
    for j, row in enumerate([header] + rows):
        cells = [str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i]) for i, c in enumerate(row)]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def fold_table(rows) -> str:
    """Per-fold rows plus their average, two decimals, as in the result tables."""
    rows = list(rows)
    body = [[f"Fold {i + 1}"] + [fmt(v) for v in r.values()] for i, r in enumerate(rows)]
    body.append(["Average"] + [fmt(v) for v in aggregate_folds(rows).values()])
    return text_table(["Metric", *COLUMN_TITLES], body)


def _model_title(kind):
    return MODEL_TITLES.get(kind, kind)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _series(path: Path, points):
    _write(path, "".join(f"{step}\t{value!r}\n" for step, value in points))


def render_report(runs: dict, out_dir) -> list:
    """Write report files for ``{model kind: [run record dict, ...]}``.

    Metric files hold no timings, so identical runs give identical files;
    durations go to their own table. Returns the written paths.
    """
    if not runs or not any(runs.values()):
        raise ValueError("need at least one run record to report")
    out = Path(out_dir)
    written = []
    averages = {}
    summary = {}
    durations = {}
    for kind in sorted(runs):
        records = sorted(runs[kind], key=lambda r: r["fold"])
        if not records:
            continue
        rows = [MetricsRow.from_dict(r["test"]) for r in records]
        avg = aggregate_folds(rows)
        averages[kind] = avg
        summary[kind] = {
            "folds": [dict(fold=r["fold"], **row.to_dict()) for r, row in zip(records, rows)],
            "average": avg.to_dict(),
        }
        best = [r.get("best_test") for r in records]
        if all(best):
            summary[kind]["best_validation_average"] = aggregate_folds(
                MetricsRow.from_dict(b) for b in best).to_dict()
        flagged = sorted({c for row in rows for c in row.never_predicted})
        title = f"{_model_title(kind)}: test performance per fold\n"
        note = f"never-predicted classes (precision 0): {flagged}\n" if flagged else ""
        path = out / f"{kind}_folds.txt"
        _write(path, title + fold_table(rows) + note)
        written.append(path)
        durations[kind] = [float(r.get("duration_seconds", 0.0)) for r in records]
        for r in records:
            f = r["fold"]
            path = out / "curves" / f"{kind}_fold{f}_train_loss.tsv"
            _series(path, enumerate(r["losses"], start=1))
            written.append(path)
            for metric in ("accuracy", "f1"):
                path = out / "curves" / f"{kind}_fold{f}_val_{metric}.tsv"
                _series(path, [(v["epoch"], v["metrics"][metric]) for v in r["validation"]])
                written.append(path)
            if any("loss" in v for v in r["validation"]):
                path = out / "curves" / f"{kind}_fold{f}_val_loss.tsv"
                _series(path, [(v["epoch"], v["loss"]) for v in r["validation"]])
                written.append(path)
            path = out / "curves" / f"{kind}_fold{f}_test_metrics.tsv"
            _series(path, [(m, r["test"][m]) for m in METRIC_NAMES])
            written.append(path)

    body = [[_model_title(k)] + [fmt(v) for v in averages[k].values()] for k in averages]
    path = out / "comparison.txt"
    _write(path, "Overall performance across models\n" + text_table(["Model", *COLUMN_TITLES], body))
    written.append(path)
    for k in averages:
        path = out / "curves" / f"comparison_{k}.tsv"
        _series(path, zip(METRIC_NAMES, averages[k].values()))
        written.append(path)

    path = out / "metrics.json"
    _write(path, json.dumps(summary, indent=1, sort_keys=True) + "\n")
    written.append(path)

    body = []
    for k, secs in durations.items():
        total = float(np.sum(secs))
        body.append([_model_title(k), format_duration(total / len(secs)), format_duration(total),
                     f"{total / len(secs):.2f}", f"{total:.2f}"])
    path = out / "durations.txt"
    _write(path, "Training duration across models\n" + text_table(
        ["Model", "Avg. Training Time/Fold", "Total Elapsed Time", "Avg. s/Fold", "Total s"], body))
    written.append(path)
    path = out / "durations.json"
    _write(path, json.dumps({k: {"per_fold": v, "total": float(np.sum(v))} for k, v in durations.items()},
                            indent=1, sort_keys=True) + "\n")
    written.append(path)
    return written

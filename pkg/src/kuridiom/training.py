"""AdamW, learning-rate schedules, the per-fold loop and cross-validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .dataset import Dataset, DatasetError, FoldPlan, stratified_nested_folds
from .evaluation import MetricsRow, aggregate_folds, evaluate
from .models import (
    ModelConfig, decay_exempt, forward, init_params, load_params, logits, predict, preset, save_params,
)
from .models.params import ModelParams
from .textnorm import normalize
from .tokenizer import Vocab, encode_batch, train_vocab

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, tensors: dict, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for name, p in tensors.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adamw_step(tensors: dict, grads: dict, state: OptimizerState, lr: float | None = None) -> None:
    """One in-place AdamW update with bias correction and decoupled decay.

    ``p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)``; tensors named as
    embeddings, biases or norm gains skip the decay term. Only names present
    in ``grads`` are updated.
    """
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in tensor {name!r} at step {state.step + 1}")
        if g.shape != tensors[name].shape:
            raise nc.ShapeError(f"gradient for {name!r} has shape {g.shape}, tensor has {tensors[name].shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = tensors[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and not decay_exempt(name):
            p *= 1.0 - lr * state.weight_decay
        p -= update.astype(p.dtype, copy=False)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    kind: str
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.kind not in ("linear_decay_with_warmup", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.kind == "linear_decay_with_warmup" and not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")


def lr_at(step: int, schedule: Schedule, base_lr: float) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if schedule.kind == "constant":
        return base_lr
    if step > schedule.total_steps:
        log.warning("step %d beyond schedule total %d; learning rate clamped to 0", step, schedule.total_steps)
        return 0.0
    w, total = schedule.warmup_steps, schedule.total_steps
    if step < w:
        return base_lr * step / w
    return base_lr * (total - step) / (total - w)


# ---------------------------------------------------------------------------
# configuration and records
# ---------------------------------------------------------------------------

DEFAULT_EPOCHS = {"transformer": 15, "rcnn": 50, "bilstm_attn": 50}
# randomly initialised small models need a far larger step than fine-tuning
DESK_LR = {"transformer": 1e-3, "rcnn": 3e-3, "bilstm_attn": 1e-3}


@dataclass(frozen=True)
class TrainConfig:
    kind: str
    preset: str = "paper"
    epochs: int | None = None
    batch_size: int = 16
    base_lr: float | None = None
    eval_every: int = 5
    seed: int = 0
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    schedule: str | None = None
    clip_norm: float | None = None
    max_len: int = 128
    vocab_size: int = 4000
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in DEFAULT_EPOCHS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        # None means "use the per-model default"
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[kind])
        if self.base_lr is None:
            object.__setattr__(self, "base_lr", DESK_LR[kind] if self.preset == "desk" else 2e-5)
        if self.schedule is None:
            object.__setattr__(self, "schedule", "constant" if kind == "rcnn" else "linear_decay_with_warmup")
        if self.clip_norm is None:
            object.__setattr__(self, "clip_norm", 0.0 if kind == "transformer" else 1.0)
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")

    def model_config(self, vocab_size: int, num_classes: int) -> ModelConfig:
        return preset(self.kind, self.preset, vocab_size, num_classes, max_len=self.max_len,
                      **self.model_overrides)

    def make_schedule(self, steps_per_epoch: int) -> Schedule:
        total = self.epochs * steps_per_epoch
        return Schedule(self.schedule, int(self.warmup_fraction * total), total)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RunRecord:
    kind: str
    fold: int
    seed: int
    config: dict
    model: dict
    vocab_sha256: str
    losses: list
    validation: list
    test: dict
    best_test: dict | None
    train_accuracy: float
    best_epoch: int | None
    best_checkpoint: str
    final_checkpoint: str
    duration_seconds: float
    status: str = "ok"

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        _atomic_write(Path(path), self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------


def loss_and_grads(params: ModelParams, ids, mask, labels, trainable, rng=None, train=True):
    """Mean cross-entropy of one batch and gradients for the ``trainable`` names."""
    leaves = {name: nc.Tensor(arr, requires_grad=name in trainable, name=name)
              for name, arr in params.tensors.items()}
    out = forward(leaves, ids, mask, train=train, rng=rng, config=params.config)
    loss = nc.cross_entropy(out, labels)
    order = [n for n in params.tensors if n in trainable]
    grads = nc.backward(loss, [leaves[n] for n in order])
    return float(loss.data), dict(zip(order, grads))


def trainable_names(params: ModelParams):
    names = list(params.tensors)
    if params.config.freeze_encoder and params.config.kind == "bilstm_attn":
        names = [n for n in names if not n.startswith("encoder.")]
    return set(names)


def fit(params: ModelParams, ids, mask, labels, cfg: TrainConfig, rng: np.random.Generator,
        on_epoch=None):
    """Train in place for ``cfg.epochs``; returns per-epoch mean losses.

    ``on_epoch(epoch, params)`` runs after each epoch (1-based); a true
    return value stops training early.
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise TrainingError("no training examples")
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    schedule = cfg.make_schedule(steps_per_epoch)
    trainable = trainable_names(params)
    state = OptimizerState.for_params({k: params.tensors[k] for k in trainable},
                                      lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    losses = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, ids[idx], mask[idx], labels[idx], trainable, rng=rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            if cfg.clip_norm:
                clip_global_norm(grads, cfg.clip_norm)
            adamw_step(params.tensors, grads, state, lr=lr_at(step, schedule, cfg.base_lr))
            step += 1
            total += loss * len(idx)
        losses.append(total / n)
        if on_epoch is not None and on_epoch(epoch, params):
            break
    return losses


def mean_loss(params, ids, mask, labels, batch_size=64):
    scores = logits(params, ids, mask, batch_size)
    s = scores - scores.max(axis=1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def fit_vocab(texts, size):
    return train_vocab([normalize(t) for t in texts], size)


def encode_texts(texts, vocab: Vocab, max_len: int):
    return encode_batch([normalize(t) for t in texts], vocab, max_len)


def vocab_digest(vocab: Vocab) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def train_fold(ds: Dataset, plan: FoldPlan, fold: int, cfg: TrainConfig, out_dir=None,
               vocab: Vocab | None = None) -> RunRecord:
    """Train one fold from scratch and evaluate on its held-out test split.

    The vocabulary (when not given) is learned from the fold's training and
    validation texts. Test rows are encoded only after training finishes.
    """
    plan.check_covers(ds)
    started = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    texts = ds.texts
    labels = ds.labels
    train_idx = plan.indices(fold, "train")
    val_idx = plan.indices(fold, "validation")
    if vocab is None:
        fit_idx = np.concatenate([train_idx, val_idx])
        vocab = fit_vocab([texts[i] for i in fit_idx], cfg.vocab_size)
    mcfg = cfg.model_config(len(vocab), ds.num_classes)
    rng = np.random.default_rng([cfg.seed, fold])
    params = init_params(mcfg, rng)
    if out is not None:
        vocab.save(out / "vocab.txt")
        _atomic_write(out / "config.json", json.dumps(
            {"train": cfg.to_dict(), "model": mcfg.to_dict(), "fold": fold,
             "classes": {str(c): s for c, s in ds.class_table.items()},
             "original_labels": {str(c): y for c, y in ds.original_labels.items()}},
            indent=1, sort_keys=True) + "\n")

    tr_ids, tr_mask = encode_texts([texts[i] for i in train_idx], vocab, cfg.max_len)
    va_ids, va_mask = encode_texts([texts[i] for i in val_idx], vocab, cfg.max_len)
    validation = []
    best = {"f1": -1.0, "epoch": None, "params": None}
    best_path = str(out / "best.ckpt") if out is not None else ""
    final_path = str(out / "final.ckpt") if out is not None else ""

    def on_epoch(epoch, p):
        if len(val_idx) == 0:
            return
        if epoch % cfg.eval_every and epoch != cfg.epochs:
            return
        row = evaluate(predict(logits(p, va_ids, va_mask)), labels[val_idx], ds.num_classes)
        validation.append({"epoch": epoch, "metrics": row.to_dict(),
                           "loss": mean_loss(p, va_ids, va_mask, labels[val_idx])})
        log.info("%s fold %d epoch %d: validation accuracy %.2f f1 %.2f",
                 cfg.kind, fold, epoch, row.accuracy, row.f1)
        if row.f1 > best["f1"]:
            best.update(f1=row.f1, epoch=epoch, params={k: v.copy() for k, v in p.tensors.items()})
            if out is not None:
                save_params(ModelParams(mcfg, best["params"]), best_path)

    with nc.single_thread():
        losses = fit(params, tr_ids, tr_mask, labels[train_idx], cfg, rng, on_epoch=on_epoch)
        if out is not None:
            save_params(params, final_path)
            params = load_params(final_path, mcfg)
        train_acc = evaluate(predict(logits(params, tr_ids, tr_mask)), labels[train_idx], ds.num_classes).accuracy

        # the test split is encoded only now, after training is over
        test_idx = plan.indices(fold, "test")
        te_ids, te_mask = encode_texts([texts[i] for i in test_idx], vocab, cfg.max_len)
        test = evaluate(predict(logits(params, te_ids, te_mask)), labels[test_idx], ds.num_classes)
        best_test = None
        if best["params"] is not None:
            bp = ModelParams(mcfg, best["params"])
            best_test = evaluate(predict(logits(bp, te_ids, te_mask)), labels[test_idx], ds.num_classes).to_dict()

    record = RunRecord(
        kind=cfg.kind, fold=fold, seed=cfg.seed, config=cfg.to_dict(), model=mcfg.to_dict(),
        vocab_sha256=vocab_digest(vocab), losses=losses, validation=validation, test=test.to_dict(),
        best_test=best_test, train_accuracy=train_acc, best_epoch=best["epoch"],
        best_checkpoint=best_path if best["params"] is not None else "", final_checkpoint=final_path,
        duration_seconds=time.perf_counter() - started,
    )
    if out is not None:
        record.save(out / "record.json")
    return record


def _fold_job(args):
    ds, plan, fold, cfg, out_dir = args
    return train_fold(ds, plan, fold, cfg, out_dir)


def run_cross_validation(ds: Dataset, k: int, seed: int, cfg: TrainConfig, out_dir=None,
                         parallel: int = 1, plan: FoldPlan | None = None):
    """Train ``k`` independent folds; returns ``(records, average MetricsRow)``.

    ``seed`` fixes the fold plan; each fold's model and shuffling use
    ``cfg.seed`` together with the fold id. Finished folds are persisted even
    when a later fold fails.
    """
    if plan is None:
        plan = stratified_nested_folds(ds, k, seed)
    elif plan.k != k:
        raise DatasetError(f"fold plan has k={plan.k}, expected {k}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        plan.save(out / "plan.json")
    jobs = [(ds, plan, f, cfg, out / f"fold{f}" if out is not None else None) for f in range(k)]
    records, failures = [], []
    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_fold_job, job) for job in jobs]
            for f, fut in enumerate(futures):
                try:
                    records.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported below
                    failures.append((f, exc))
    else:
        for f, job in enumerate(jobs):
            try:
                records.append(_fold_job(job))
            except Exception as exc:  # noqa: BLE001
                failures.append((f, exc))
    average = aggregate_folds(MetricsRow.from_dict(r.test) for r in records) if records else None
    if out is not None:
        summary = {
            "kind": cfg.kind, "k": k, "plan_seed": seed,
            "status": "failed" if failures else "ok",
            "folds": [r.fold for r in records],
            "failures": {str(f): str(e) for f, e in failures},
            "average": average.to_dict() if average else None,
        }
        _atomic_write(out / "cv.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if failures:
        f, exc = failures[0]
        raise TrainingError(f"fold {f} failed: {exc}") from exc
    return records, average

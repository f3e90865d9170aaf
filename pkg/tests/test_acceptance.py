"""End-to-end acceptance suite: one pass/fail line per criterion.

Run on its own with ``pytest tests/test_acceptance.py -v``; the verdict lines
appear in the terminal summary.
"""

import json
import time
from collections import Counter
from pathlib import Path

import numpy as np
from gradcheck import LAYER_CASES, worst_error

from kuridiom.cli import main as cli_main
from kuridiom.dataset import (
    Example,
    SyntheticSpec,
    from_examples,
    generate_synthetic,
    stratified_nested_folds,
)
from kuridiom.evaluation import MetricsRow, aggregate_folds, confusion, fmt, metrics
from kuridiom.models import (
    KINDS,
    ModelConfig,
    forward,
    init_params,
    load_params,
    logits,
    predict,
    save_params,
)
from kuridiom.textnorm import normalize
from kuridiom.tokenizer import decode, encode, tokenize, train_vocab
from kuridiom.training import (
    OptimizerState,
    TrainConfig,
    adamw_step,
    encode_texts,
    fit,
    fit_vocab,
    mean_loss,
)

VERDICTS = []


def verdict(name, ok, detail):
    VERDICTS.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def note(name, detail):
    VERDICTS.append(f"[INFO] {name}: {detail}")


# reference per-fold rows and their stated averages (accuracy, precision, recall, f1)
TABLES = {
    "transformer": ([(98.82, 98.84, 98.82, 98.81), (99.20, 99.19, 99.20, 99.16), (99.39, 99.42, 99.39, 99.37),
                (99.10, 99.16, 99.10, 99.11), (98.87, 98.82, 98.87, 98.80)],
               (99.07, 99.09, 99.07, 99.05)),
    "rcnn": ([(96.36, 96.49, 96.36, 96.31), (96.64, 96.68, 96.64, 96.56), (96.27, 96.32, 96.27, 96.18),
                (96.31, 96.55, 96.31, 96.32), (96.64, 96.61, 96.64, 96.56)],
               (96.45, 96.53, 96.45, 96.39)),
    "bilstm_attn": ([(81.39, 81.92, 81.39, 80.14), (80.29, 79.93, 80.29, 79.01), (78.69, 79.42, 78.69, 77.41),
                (79.21, 78.22, 79.21, 77.87), (82.70, 81.94, 82.70, 81.46)],
               (80.46, 80.28, 80.46, 79.18)),
}
EXACT = {("transformer", "f1"), ("rcnn", "precision"),
         ("bilstm_attn", "accuracy"), ("bilstm_attn", "precision"), ("bilstm_attn", "recall"), ("bilstm_attn", "f1")}
NAMES = ("accuracy", "precision", "recall", "f1")


def test_fold_aggregation():
    start = time.perf_counter()
    problems = []
    checked = 0
    for table, (rows, printed) in TABLES.items():
        avg = aggregate_folds(MetricsRow(*r) for r in rows)
        for name, want, got in zip(NAMES, printed, avg.values()):
            shown = fmt(got)
            checked += 1
            if abs(float(shown) - want) > 0.01 + 1e-9:
                problems.append(f"{table} {name} {shown} vs reference {want:.2f} (beyond 0.01)")
            if (table, name) in EXACT and shown != f"{want:.2f}":
                problems.append(f"{table} {name} mean {got:.4f} renders {shown}, reference {want:.2f}")
    elapsed = time.perf_counter() - start
    detail = f"{checked} averages, {len(problems)} mismatch(es) in {elapsed:.3f}s"
    if problems:
        detail += ": " + "; ".join(problems)
    verdict("fold aggregation", not problems and elapsed < 1, detail)


def test_gradient_suite():
    start = time.perf_counter()
    errors = {layer: worst_error(layer, 100) for layer in sorted(LAYER_CASES)}
    elapsed = time.perf_counter() - start
    worst_layer = max(errors, key=errors.get)
    ok = max(errors.values()) < 1e-4 and elapsed < 120
    verdict("gradient suite", ok, f"{len(errors)} layer types x 100 cases, worst relative error "
            f"{errors[worst_layer]:.2e} ({worst_layer}), {elapsed:.1f}s")


def _brute(preds, labels, C):
    tp = [0] * C
    fp = [0] * C
    fn = [0] * C
    for p, t in zip(preds, labels):
        if p == t:
            tp[p] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    n = len(labels)
    out = [100.0 * sum(tp) / n, 0.0, 0.0, 0.0]
    for c in range(C):
        support = tp[c] + fn[c]
        if not support:
            continue
        prec = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        rec = tp[c] / support
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[1] += 100.0 * support / n * prec
        out[2] += 100.0 * support / n * rec
        out[3] += 100.0 * support / n * f1
    return out


def test_metric_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    recall_equal = True
    for _ in range(1000):
        C = int(rng.integers(1, 11))
        n = int(rng.integers(1, 300))
        labels = rng.integers(0, C, n)
        skill = rng.random()
        preds = np.where(rng.random(n) < skill, labels, rng.integers(0, C, n))
        got = metrics(confusion(preds, labels, C))
        want = _brute(preds.tolist(), labels.tolist(), C)
        worst = max(worst, max(abs(a - b) for a, b in zip(got.values(), want)))
        recall_equal &= got.recall == got.accuracy
    elapsed = time.perf_counter() - start
    verdict("metric oracle", worst < 1e-9 and recall_equal and elapsed < 10,
            f"1000 matrices, max abs diff {worst:.1e}, weighted recall == accuracy: {recall_equal}, {elapsed:.1f}s")


def _plan_violations(plan, labels, k):
    n = len(labels)
    test_fold = np.asarray(plan.test_fold)
    bad = []
    if sorted(np.concatenate([plan.indices(f, "test") for f in range(k)]).tolist()) != list(range(n)):
        bad.append("test folds not a partition")
    for c, total in Counter(labels.tolist()).items():
        in_c = labels == c
        for f in range(k):
            got = int((in_c & (test_fold == f)).sum())
            if abs(got - total / k) > 1:
                bad.append(f"class {c} fold {f} test {got} vs {total / k:.1f}")
            rest = int((in_c & (test_fold != f)).sum())
            val = int(in_c[plan.indices(f, "validation")].sum())
            if abs(val - 0.2 * rest) > 1:
                bad.append(f"class {c} fold {f} validation {val} vs {0.2 * rest:.1f}")
    for f in range(k):
        parts = [set(plan.indices(f, r).tolist()) for r in ("train", "validation", "test")]
        if sum(map(len, parts)) != n or set.union(*parts) != set(range(n)):
            bad.append(f"fold {f} roles not a partition")
    return bad


def test_stratification():
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    failures = []
    plans = 0
    for d in range(200):
        k = int(rng.integers(2, 6))
        classes = int(rng.integers(1, 13))
        cap = 600 // classes
        sizes = rng.integers(k, max(k, cap) + 1, size=classes)
        examples = [Example(c, f"{c}/{i}", f"idiom{c}") for c in range(classes) for i in range(sizes[c])]
        order = rng.permutation(len(examples))
        ds = from_examples([examples[i] for i in order])
        plan = stratified_nested_folds(ds, k, seed=d)
        plans += 1
        bad = _plan_violations(plan, ds.labels, k)
        if bad:
            failures.append(f"dataset {d}: {bad[0]}")
    elapsed = time.perf_counter() - start
    verdict("stratification", not failures and elapsed < 30,
            f"{plans} datasets (<=12 classes, <=600 examples, k in 2..5), "
            f"{len(failures)} with violations, {elapsed:.1f}s" + (f": {failures[:3]}" if failures else ""))


def _random_text(rng):
    pools = [(0x20, 0x7E), (0x600, 0x6FF), (0x750, 0x77F), (0xFB50, 0xFDFF), (0xFE70, 0xFEFF),
             (0x0, 0x1F), (0x200B, 0x200F), (0x80, 0x2FF), (0x4E00, 0x4E80), (0x1F600, 0x1F64F)]
    length = int(rng.integers(0, 400 if rng.random() < 0.05 else 40))
    chars = []
    for _ in range(length):
        lo, hi = pools[int(rng.integers(len(pools)))]
        chars.append(chr(int(rng.integers(lo, hi + 1))))
        if rng.random() < 0.15:
            chars.append(" ")
    return "".join(chars)


def _structure_errors(enc, vocab, max_len):
    ids, mask = enc.ids, enc.mask
    errs = []
    if len(ids) != max_len or len(mask) != max_len:
        errs.append("length")
    r = enc.real_len
    if not 2 <= r <= max_len:
        errs.append("real_len")
    if ids[0] != vocab.cls_id or ids[r - 1] != vocab.sep_id:
        errs.append("cls/sep")
    if not (mask[:r] == 1).all() or not (mask[r:] == 0).all():
        errs.append("mask")
    if (ids[:r] == vocab.pad_id).any() or not (ids[r:] == vocab.pad_id).all():
        errs.append("pad")
    if ((ids[1:r - 1] == vocab.cls_id) | (ids[1:r - 1] == vocab.sep_id)).any():
        errs.append("stray special")
    if (ids < 0).any() or (ids >= len(vocab)).any():
        errs.append("id range")
    return errs


def test_tokenizer():
    start = time.perf_counter()
    ds = generate_synthetic(SyntheticSpec(6, 10, 3, 30, seed=3))
    corpus = [normalize(t) for t in ds.texts]
    vocab = train_vocab(corpus, 600)
    again = train_vocab(corpus, 600)
    deterministic = vocab == again
    rng = np.random.default_rng(5)
    bad = []
    for i in range(10_000):
        raw = _random_text(rng)
        max_len = int(rng.integers(3, 40))
        for text in (raw, normalize(raw)):
            errs = _structure_errors(encode(text, vocab, max_len), vocab, max_len)
            if errs:
                bad.append((i, errs))
    words = sorted({w for line in corpus for w in line.split()})
    roundtrip_fail = [w for w in words
                      if "[UNK]" not in tokenize(w, vocab) and decode(encode(w, vocab, 128).ids, vocab) != w]
    elapsed = time.perf_counter() - start
    ok = not bad and not roundtrip_fail and deterministic and elapsed < 30
    verdict("tokenizer", ok, f"10000 fuzz inputs ({len(bad)} invalid), decode(encode(w)) on {len(words)} "
            f"covered words ({len(roundtrip_fail)} failures), vocab training deterministic: {deterministic}, "
            f"{elapsed:.1f}s")


def _overfit(kind):
    ds = generate_synthetic(SyntheticSpec(2, 10, 2, 20, seed=11))
    assert len(ds) == 60 and ds.num_classes == 3
    vocab = fit_vocab(ds.texts, 400)
    ids, mask = encode_texts(ds.texts, vocab, 128)
    cfg = TrainConfig(kind, preset="desk", epochs=200)
    params = init_params(cfg.model_config(len(vocab), 3), np.random.default_rng(0))
    state = {}

    def on_epoch(epoch, p):
        acc = float((predict(logits(p, ids, mask)) == ds.labels).mean())
        loss = mean_loss(p, ids, mask, ds.labels)
        state.update(epoch=epoch, acc=acc, loss=loss)
        return acc == 1.0 and loss < 0.05

    losses = fit(params, ids, mask, ds.labels, cfg, np.random.default_rng(1), on_epoch=on_epoch)
    tenth = max(1, len(losses) // 10)
    falling = np.mean(losses[-tenth:]) < np.mean(losses[:tenth])
    return state, falling


_CV = {}


def _cv_accuracy(kind, tmp_root: Path):
    if kind not in _CV:
        data = tmp_root / "cv_data.tsv"
        if not data.exists():
            code = cli_main(["gen-data", "--idioms", "4", "--contexts", "25", "--variants", "4",
                             "--non-idiom", "100", "--seed", "0", "--out", str(data)])
            assert code == 0
        out = tmp_root / f"cv_{kind}"
        start = time.perf_counter()
        code = cli_main(["cv", "--model", kind, "--preset", "desk", "--data", str(data), "--k", "5",
                         "--seed", "0", "--vocab-size", "1000", "--out", str(out)])
        summary = json.loads((out / "cv.json").read_text())
        _CV[kind] = (code, summary["average"]["accuracy"], time.perf_counter() - start)
    return _CV[kind]


def test_overfit_and_cv(tmp_path_factory):
    start = time.perf_counter()
    parts = []
    ok = True
    for kind in KINDS:
        state, falling = _overfit(kind)
        good = state["acc"] == 1.0 and state["loss"] < 0.05 and falling
        ok &= good
        parts.append(f"{kind} overfit epoch {state['epoch']} acc {100 * state['acc']:.0f}% "
                     f"loss {state['loss']:.4f}")
    root = tmp_path_factory.mktemp("acceptance_cv")
    for kind in ("transformer", "rcnn"):
        code, acc, secs = _cv_accuracy(kind, root)
        ok &= code == 0 and acc >= 95.0
        parts.append(f"{kind} cv k=5 mean test accuracy {acc:.2f}% ({secs:.0f}s)")
    elapsed = time.perf_counter() - start
    ds = generate_synthetic(SyntheticSpec(4, 25, 4, 100, seed=0))
    assert len(ds) == 500 and ds.num_classes == 5
    ok &= elapsed < 15 * 60
    verdict("overfit sanity + desk cv", ok, "; ".join(parts) + f"; {elapsed:.0f}s total")
    transformer, rcnn = _CV["transformer"][1], _CV["rcnn"][1]
    note("relative ordering (soft)",
         f"transformer {transformer:.2f}% {'>=' if transformer >= rcnn else '<'} rcnn {rcnn:.2f}%")


def _random_config(rng):
    kind = KINDS[int(rng.integers(3))]
    heads = int(rng.integers(1, 3))
    return ModelConfig(kind=kind, vocab_size=int(rng.integers(6, 30)), num_classes=int(rng.integers(1, 6)),
                       max_len=int(rng.integers(6, 16)), layers=int(rng.integers(1, 3)), heads=heads,
                       hidden=heads * int(rng.integers(1, 5)), ff_inner=int(rng.integers(0, 9)),
                       emb_dim=int(rng.integers(1, 6)), lstm_hidden=int(rng.integers(1, 5)),
                       conv_width=int(rng.choice([1, 3, 5])), conv_filters=int(rng.integers(1, 5)),
                       dropout=float(rng.uniform(0, 0.6)))


def test_checkpoint_roundtrip(tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    mismatches = []
    for i in range(50):
        cfg = _random_config(rng)
        params = init_params(cfg, rng)
        n = int(rng.integers(1, 5))
        lengths = rng.integers(2, cfg.max_len + 1, size=n)
        ids = rng.integers(4, cfg.vocab_size, size=(n, cfg.max_len)) if cfg.vocab_size > 4 else \
            np.zeros((n, cfg.max_len), dtype=np.int64)
        mask = (np.arange(cfg.max_len)[None, :] < lengths[:, None]).astype(np.int8)
        ids = np.where(mask == 1, ids, 0)
        before = forward(params, ids, mask).data
        path = tmp_path / f"m{i}.ckpt"
        save_params(params, path)
        after = forward(load_params(path, cfg), ids, mask).data
        if before.tobytes() != after.tobytes():
            mismatches.append(f"{i}:{cfg.kind}")
    elapsed = time.perf_counter() - start
    verdict("checkpoint round-trip", not mismatches and elapsed < 60,
            f"50 random configs, {len(mismatches)} with differing logits, {elapsed:.1f}s")


def test_adamw_decoupling():
    rng = np.random.default_rng(0)
    lam = 0.01
    tensors = {"layer.weight": rng.normal(size=(8, 8)), "layer.bias": rng.normal(size=8)}
    state = OptimizerState.for_params(tensors, lr=1e-3, weight_decay=lam)
    worst = 0.0
    exact = True
    for step in range(100):
        lr = float(rng.uniform(1e-5, 1e-2))
        before = {k: v.copy() for k, v in tensors.items()}
        adamw_step(tensors, {k: np.zeros_like(v) for k, v in tensors.items()}, state, lr=lr)
        shrink = (before["layer.weight"] - tensors["layer.weight"]) / before["layer.weight"]
        worst = max(worst, float(np.abs(shrink - lr * lam).max()) / (lr * lam))
        exact &= bool((tensors["layer.weight"] == before["layer.weight"] * (1 - lr * lam)).all())
        exact &= bool((tensors["layer.bias"] == before["layer.bias"]).all())
        exact &= not state.m["layer.weight"].any() and not state.v["layer.weight"].any()
    verdict("AdamW decoupling", exact and worst < 1e-9,
            f"100 zero-gradient steps, lambda={lam}: p' == p(1 - lr*lambda) bit-exact: {exact}, "
            f"max relative deviation of observed shrinkage from lr*lambda {worst:.1e}")

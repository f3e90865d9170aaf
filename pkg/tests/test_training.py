import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kuridiom.dataset import SyntheticSpec, generate_synthetic, stratified_nested_folds
from kuridiom.models import init_params, logits, predict
from kuridiom.training import (
    OptimizerState, RunRecord, Schedule, TrainConfig, TrainingError, adamw_step, clip_global_norm,
    encode_texts, fit, fit_vocab, lr_at, run_cross_validation, train_fold,
)


def small_ds(seed=0):
    return generate_synthetic(SyntheticSpec(2, 10, 2, 20, seed=seed))


class TestAdamW:
    def test_zero_grads_no_decay_unchanged(self):
        p = {"w": np.array([1.0, -2.0])}
        s = OptimizerState.for_params(p, lr=0.1, weight_decay=0.0)
        adamw_step(p, {"w": np.zeros(2)}, s)
        assert p["w"].tolist() == [1.0, -2.0]
        assert not s.m["w"].any() and not s.v["w"].any()

    def test_zero_grads_decay_exact(self):
        p = {"w": np.array([1.5, -2.0, 3.25])}
        s = OptimizerState.for_params(p, lr=0.01, weight_decay=0.1)
        before = p["w"].copy()
        adamw_step(p, {"w": np.zeros(3)}, s)
        assert (p["w"] == before * (1 - 0.01 * 0.1)).all()

    def test_first_step_hand_value(self):
        p = {"w": np.array([0.0])}
        s = OptimizerState.for_params(p, weight_decay=0.0)
        adamw_step(p, {"w": np.array([1.0])}, s)
        assert s.step == 1
        assert np.isclose(p["w"][0], -2e-5 / (1 + 1e-8), rtol=1e-12, atol=0)

    def test_exempt_names(self):
        p = {n: np.ones(2) for n in ("embed.token", "a.bias", "n.gain", "a.weight")}
        s = OptimizerState.for_params(p, lr=0.1, weight_decay=0.5)
        adamw_step(p, {n: np.zeros(2) for n in p}, s)
        assert p["embed.token"][0] == p["a.bias"][0] == p["n.gain"][0] == 1.0
        assert p["a.weight"][0] == 0.95

    def test_nan_names_tensor(self):
        p = {"layer0.w": np.ones(2)}
        with pytest.raises(TrainingError, match="layer0.w"):
            adamw_step(p, {"layer0.w": np.array([1.0, np.nan])}, OptimizerState.for_params(p))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-5, 1e-1), st.floats(0, 0.1), st.integers(0, 10**6))
    def test_decoupling_independent_of_moments(self, lr, wd, seed):
        rng = np.random.default_rng(seed)
        p = {"w": rng.normal(size=4)}
        s = OptimizerState.for_params(p, lr=lr, weight_decay=wd)
        for _ in range(3):
            adamw_step(p, {"w": rng.normal(size=4)}, s)
        # moments are now non-zero but decay m and v towards zero slowly;
        # the decay part of a zero-gradient step is still exactly p * lr * wd
        s.m["w"][:] = 0
        s.v["w"][:] = 0
        before = p["w"].copy()
        adamw_step(p, {"w": np.zeros(4)}, s)
        assert (p["w"] == before * (1 - lr * wd)).all()

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_global_norm(g, 1.0) == 5.0
        assert np.isclose(np.hypot(g["a"][0], g["b"][0]), 1.0)


class TestSchedule:
    def test_points(self):
        s = Schedule("linear_decay_with_warmup", 10, 110)
        assert lr_at(0, s, 1.0) == 0.0
        assert lr_at(10, s, 2e-5) == 2e-5
        assert lr_at(110, s, 1.0) == 0.0
        assert lr_at(60, s, 1.0) == 0.5
        assert lr_at(5, s, 1.0) == 0.5

    def test_constant(self):
        assert lr_at(7, Schedule("constant", 0, 10), 3e-4) == 3e-4

    def test_past_total_clamped(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert lr_at(120, Schedule("linear_decay_with_warmup", 10, 110), 1.0) == 0.0
        assert "clamped" in caplog.text

    def test_invalid(self):
        with pytest.raises(ValueError):
            Schedule("linear_decay_with_warmup", 10, 10)
        with pytest.raises(ValueError):
            Schedule("cosine", 0, 10)

    @given(st.integers(1, 500), st.integers(1, 500))
    def test_continuity_at_warmup(self, w, extra):
        s = Schedule("linear_decay_with_warmup", w, w + extra)
        assert abs(lr_at(w, s, 1.0) - lr_at(w - 1, s, 1.0)) <= 1.0 / w + 1e-12
        assert abs(lr_at(w, s, 1.0) - lr_at(w + 1, s, 1.0)) <= 1.0 / extra + 1e-12
        assert lr_at(w, s, 1.0) == 1.0


class TestConfig:
    def test_defaults(self):
        assert TrainConfig("transformer").epochs == 15
        assert TrainConfig("rcnn").epochs == 50
        c = TrainConfig("bilstm-attn")
        assert (c.kind, c.epochs, c.batch_size, c.base_lr, c.eval_every) == ("bilstm_attn", 50, 16, 2e-5, 5)
        assert TrainConfig("rcnn").schedule == "constant"
        assert TrainConfig("transformer").clip_norm == 0.0 and TrainConfig("rcnn").clip_norm == 1.0

    def test_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig("rcnn", epochs=0)
        with pytest.raises(ValueError):
            TrainConfig("rcnn", batch_size=0)


class TestLoop:
    def test_deterministic_losses(self):
        ds = small_ds()
        plan = stratified_nested_folds(ds, 5, 0)
        cfg = TrainConfig("rcnn", preset="desk", epochs=3, vocab_size=200)
        a = train_fold(ds, plan, 1, cfg)
        b = train_fold(ds, plan, 1, cfg)
        assert a.losses == b.losses and a.test == b.test

    def test_overfit_tiny(self):
        ds = small_ds()
        vocab = fit_vocab(ds.texts, 200)
        ids, mask = encode_texts(ds.texts, vocab, 64)
        cfg = TrainConfig("transformer", preset="desk", epochs=30, max_len=64)
        params = init_params(cfg.model_config(len(vocab), ds.num_classes), np.random.default_rng(0))
        losses = fit(params, ids, mask, ds.labels, cfg, np.random.default_rng(0))
        assert (predict(logits(params, ids, mask)) == ds.labels).all()
        assert losses[-1] < 0.05
        assert np.mean(losses[-3:]) < np.mean(losses[:3])

    def test_record_files(self, tmp_path):
        ds = small_ds()
        plan = stratified_nested_folds(ds, 5, 0)
        cfg = TrainConfig("rcnn", preset="desk", epochs=2, eval_every=1, vocab_size=200)
        rec = train_fold(ds, plan, 0, cfg, out_dir=tmp_path)
        for name in ("config.json", "vocab.txt", "best.ckpt", "final.ckpt", "record.json"):
            assert (tmp_path / name).exists()
        again = RunRecord.load(tmp_path / "record.json")
        assert again.losses == rec.losses
        assert [v["epoch"] for v in rec.validation] == [1, 2]
        assert all(0 <= rec.test[m] <= 100 for m in ("accuracy", "precision", "recall", "f1"))

    def test_validation_schedule(self):
        ds = small_ds()
        plan = stratified_nested_folds(ds, 5, 0)
        rec = train_fold(ds, plan, 0, TrainConfig("rcnn", preset="desk", epochs=7, eval_every=5, vocab_size=200))
        assert [v["epoch"] for v in rec.validation] == [5, 7]

    def test_test_rows_never_encoded_before_training(self, monkeypatch):
        import kuridiom.training as tr
        ds = small_ds()
        plan = stratified_nested_folds(ds, 5, 0)
        test_texts = {ds.texts[i] for i in plan.indices(2, "test")}
        seen = []
        real_fit, real_encode = tr.fit, tr.encode_texts

        def spy_encode(texts, *a):
            seen.append(("encode", bool(test_texts & set(texts))))
            return real_encode(texts, *a)

        def spy_fit(*a, **k):
            seen.append(("fit", False))
            return real_fit(*a, **k)

        monkeypatch.setattr(tr, "encode_texts", spy_encode)
        monkeypatch.setattr(tr, "fit", spy_fit)
        tr.train_fold(ds, plan, 2, TrainConfig("rcnn", preset="desk", epochs=1, vocab_size=200))
        fit_at = seen.index(("fit", False))
        assert not any(touched for _, touched in seen[:fit_at])
        assert any(touched for _, touched in seen[fit_at:])

    def test_non_finite_loss_aborts(self):
        ds = small_ds()
        vocab = fit_vocab(ds.texts, 200)
        ids, mask = encode_texts(ds.texts, vocab, 64)
        cfg = TrainConfig("rcnn", preset="desk", epochs=1, max_len=64)
        params = init_params(cfg.model_config(len(vocab), ds.num_classes), np.random.default_rng(0))
        params.tensors["classifier.bias"][0] = np.inf
        with pytest.raises(TrainingError, match="epoch 1, batch 0"):
            fit(params, ids, mask, ds.labels, cfg, np.random.default_rng(0))


class TestCrossValidation:
    def test_k2_shape_and_persisted(self, tmp_path):
        ds = small_ds()
        cfg = TrainConfig("rcnn", preset="desk", epochs=2, vocab_size=200)
        records, avg = run_cross_validation(ds, 2, 3, cfg, out_dir=tmp_path)
        assert [r.fold for r in records] == [0, 1]
        assert json.loads((tmp_path / "cv.json").read_text())["status"] == "ok"
        assert (tmp_path / "fold1" / "record.json").exists()
        assert np.isclose(avg.accuracy, np.mean([r.test["accuracy"] for r in records]))

    def test_seed_changes_curves_not_plan(self, tmp_path):
        ds = small_ds()
        a, _ = run_cross_validation(ds, 2, 0, TrainConfig("rcnn", preset="desk", epochs=2, seed=1,
                                                            vocab_size=200), tmp_path / "a")
        b, _ = run_cross_validation(ds, 2, 0, TrainConfig("rcnn", preset="desk", epochs=2, seed=2,
                                                            vocab_size=200), tmp_path / "b")
        assert (tmp_path / "a" / "plan.json").read_bytes() == (tmp_path / "b" / "plan.json").read_bytes()
        assert a[0].losses != b[0].losses

    def test_failure_persists_partial(self, tmp_path, monkeypatch):
        import kuridiom.training as tr
        real = tr.train_fold

        def flaky(ds, plan, fold, cfg, out_dir=None, vocab=None):
            if fold == 1:
                raise TrainingError("boom")
            return real(ds, plan, fold, cfg, out_dir)

        monkeypatch.setattr(tr, "train_fold", flaky)
        with pytest.raises(TrainingError, match="fold 1"):
            tr.run_cross_validation(small_ds(), 2, 0, TrainConfig("rcnn", preset="desk", epochs=1,
                                                                   vocab_size=200), tmp_path)
        summary = json.loads((tmp_path / "cv.json").read_text())
        assert summary["status"] == "failed" and summary["folds"] == [0]
        assert (tmp_path / "fold0" / "record.json").exists()

import json
from dataclasses import replace

import numpy as np
import pytest
import torch

import mra.training as training
from mra.artifacts import read_csv
from mra.augment import AugmentorHandle
from mra.config import RunConfig
from mra.data import make_synthetic
from mra.errors import ConfigError, NumericError, ValidationError
from mra.training import (AugmentPipeline, evaluate_occlusion, load_classifier, load_mae,
                          make_handle, occlude_center, random_crop_flip, run_ablation,
                          run_classification, run_pretraining, suite_arms)


@pytest.fixture(scope="module")
def blobs():
    return make_synthetic("blobs10", 160, 100, seed=0)


def pretrain_cfg(out, **kw):
    base = dict(task="pretrain", dataset="synthetic:blobs10", model_preset="mae-tiny-test",
                batch_size=16, out_dir=str(out))
    base.update(kw)
    return RunConfig(**base)


def classify_cfg(out, **kw):
    base = dict(task="classify", dataset="synthetic:blobs10", classifier_width=8, epochs=2,
                batch_size=32, out_dir=str(out))
    base.update(kw)
    return RunConfig(**base)


class TestPretraining:
    def test_resume_reproduces_next_losses(self, tmp_path, blobs):
        data = make_synthetic("blobs10", 64, 16)
        full = run_pretraining(pretrain_cfg(tmp_path / "full", max_steps=6), data=data)
        part = run_pretraining(pretrain_cfg(tmp_path / "part", max_steps=3), data=data)
        assert part.step_losses == full.step_losses[:3]
        resumed = run_pretraining(pretrain_cfg(tmp_path / "res", max_steps=6), resume=part.checkpoint,
                                  data=data)
        assert resumed.step_losses == full.step_losses[3:]
        assert resumed.metrics.summary["resumed"] is True

    def test_resume_config_mismatch(self, tmp_path):
        data = make_synthetic("blobs10", 32, 8)
        part = run_pretraining(pretrain_cfg(tmp_path / "a", max_steps=1), data=data)
        with pytest.raises(ConfigError):
            run_pretraining(pretrain_cfg(tmp_path / "b", max_steps=2, mask_ratio=0.6),
                            resume=part.checkpoint, data=data)

    def test_defaults_and_artifacts(self, tmp_path):
        data = make_synthetic("blobs10", 32, 8)
        res = run_pretraining(pretrain_cfg(tmp_path, max_steps=2), data=data)
        saved = json.loads((tmp_path / "config.json").read_text())
        assert saved["epochs"] == 200 and saved["optimizer"] == "adamw"
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        names = {a["path"] for a in manifest["artifacts"]}
        assert {"mae.ckpt", "metrics.csv", "summary.json", "config.json"} <= names
        assert res.metrics.rows[-1]["epoch"] == 1
        assert load_mae(res.checkpoint).config.encoder_layers == 2

    def test_abort_keeps_last_checkpoint(self, tmp_path, monkeypatch):
        data = make_synthetic("blobs10", 32, 8)
        real = training.pretrain_step
        calls = []

        def flaky(*a, **kw):
            calls.append(1)
            if len(calls) == 4:
                raise NumericError("loss is NaN")
            return real(*a, **kw)

        monkeypatch.setattr(training, "pretrain_step", flaky)
        with pytest.raises(NumericError, match="last good checkpoint"):
            run_pretraining(pretrain_cfg(tmp_path, max_steps=8), data=data)
        assert (tmp_path / "mae.ckpt").exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["status"] == "aborted" and summary["step"] == 3

    def test_rejects_classify_task(self, tmp_path):
        with pytest.raises(ConfigError):
            run_pretraining(classify_cfg(tmp_path))


class TestClassification:
    def test_separable_set_learned(self, tmp_path):
        data = make_synthetic("two-blobs", 400, 400)
        m = run_classification(classify_cfg(tmp_path, epochs=3), data=data)
        assert m.summary["final_eval_acc"] >= 0.95

    def test_deterministic(self, tmp_path, blobs):
        a = run_classification(classify_cfg(tmp_path / "a", augmentor="cutmix"), data=blobs)
        b = run_classification(classify_cfg(tmp_path / "b", augmentor="cutmix"), data=blobs)
        assert a.rows == b.rows
        assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
        assert all(0 <= r["train_acc"] <= 1 and 0 <= r["eval_acc"] <= 1 for r in a.rows)
        assert [r["epoch"] for r in a.rows] == [1, 2]

    def test_mra_arm_keeps_augmentor_frozen(self, tmp_path, blobs, tiny_checkpoint):
        m = run_classification(classify_cfg(tmp_path, augmentor="mra", checkpoint=str(tiny_checkpoint)),
                               data=blobs)
        s = m.summary
        assert s["augmentor_hash_before"] == s["augmentor_hash_after"]
        assert s["augment_calls"] == 2 * 160

    def test_mra_without_checkpoint(self, tmp_path, blobs):
        with pytest.raises(ConfigError, match="checkpoint"):
            run_classification(classify_cfg(tmp_path, augmentor="mra"), data=blobs)

    def test_classifier_checkpoint_reloads(self, tmp_path, blobs):
        m = run_classification(classify_cfg(tmp_path, epochs=1), data=blobs)
        net = load_classifier(tmp_path / "classifier.ckpt")
        assert training.accuracy(net, blobs.eval_x, blobs.eval_y) == m.summary["final_eval_acc"]

    @pytest.mark.parametrize("name", ["none", "cutout", "mixup", "cutmix", "mra", "mra_mask_only",
                                      "mra+cutmix"])
    def test_every_registry_augmentor(self, name, tmp_path, blobs, tiny_checkpoint):
        cfg = classify_cfg(tmp_path, augmentor=name, checkpoint=str(tiny_checkpoint), epochs=1)
        m = run_classification(cfg, data=make_synthetic("blobs10", 40, 20))
        assert np.isfinite(m.rows[0]["train_loss"])


class TestPipeline:
    def test_mixed_labels(self, blobs):
        cfg = classify_cfg("unused", augmentor="mixup").materialize()
        imgs, la, lb, lam = AugmentPipeline(cfg)(blobs.train_x[:8], blobs.train_y[:8], np.arange(8), 3)
        assert imgs.shape == (8, 32, 32, 3) and np.array_equal(la, blobs.train_y[:8])
        assert sorted(lb.tolist()) == sorted(la.tolist())
        assert ((0 <= lam) & (lam <= 1)).all()

    def test_stored_labels_untouched(self, blobs, tiny_checkpoint):
        cfg = classify_cfg("unused", augmentor="mra+cutmix").materialize()
        y = blobs.train_y[:8].copy()
        AugmentPipeline(cfg, make_handle(load_mae(tiny_checkpoint), cfg))(blobs.train_x[:8], y,
                                                                          np.arange(8), 0)
        assert np.array_equal(y, blobs.train_y[:8])

    def test_mra_requires_handle(self):
        with pytest.raises(ConfigError):
            AugmentPipeline(classify_cfg("unused", augmentor="mra_mask_only"))

    def test_crop_flip(self, blobs):
        x = blobs.train_x[:4]
        assert np.array_equal(random_crop_flip(x, np.arange(4), 0, 0, False), x)
        a = random_crop_flip(x, np.arange(4), 5, 4, True)
        assert np.array_equal(a, random_crop_flip(x, np.arange(4), 5, 4, True))
        assert a.shape == x.shape and not np.array_equal(a, x)


class TestOcclusion:
    def test_center_window(self):
        x = np.ones((1, 8, 8, 1), np.float32)
        assert occlude_center(x, 8).sum() == 64 and occlude_center(x, 0).sum() == 0
        w = occlude_center(x, 4)[0, ..., 0]
        assert w[2:6, 2:6].all() and w.sum() == 16
        assert occlude_center(x, 3)[0, ..., 0][2:5, 2:5].all()
        with pytest.raises(ValidationError):
            occlude_center(x, 9)

    def test_curve_anchors(self, tmp_path, blobs):
        m = run_classification(classify_cfg(tmp_path, epochs=1), data=blobs)
        curve = evaluate_occlusion(m.model, blobs.eval_x, blobs.eval_y, [0, 8, 16, 32])
        assert [s for s, _ in curve] == [0, 8, 16, 32]
        assert all(0 <= e <= 1 for _, e in curve)
        n = len(blobs.eval_x)
        assert round(curve[-1][1] * n) == n - round(m.summary["final_eval_acc"] * n)
        rows = read_csv(tmp_path / "occlusion.csv")
        assert [int(r["hole_size"]) for r in rows] == [0, 8, 16, 24, 32]


class TestAblation:
    def test_suite_arm_names(self):
        base = classify_cfg("x")
        assert list(suite_arms("mask_strategy", base)) == ["baseline", "mask_low", "mask_high", "random"]
        assert list(suite_arms("reconstruction", base)) == ["baseline", "cutout", "mra_mask_only", "mra"]
        ratios = suite_arms("mask_ratio", base)
        assert [a.mask_ratio for a in ratios.values()] == [0.2, 0.4, 0.6, 0.8]
        epochs = suite_arms("pretrain_epochs", replace(base, pretrain_epochs=10))
        assert [a.pretrain_epochs for a in epochs.values()] == [5, 10, 40]
        assert len(suite_arms("model_size", base)) == 3
        with pytest.raises(ConfigError):
            suite_arms("learning_rate", base)

    def test_arms_differ_in_one_key(self):
        base = classify_cfg("x", augmentor="mra")
        for suite in ("mask_ratio", "mask_strategy", "pretrain_epochs", "model_size"):
            arms = suite_arms(suite, base)
            for arm in arms.values():
                assert len(base.diff(arm)) <= 1

    def test_failed_arm_recorded(self, tmp_path, blobs):
        base = classify_cfg(tmp_path, checkpoint=str(tmp_path / "missing.ckpt"), epochs=1)
        out = run_ablation("reconstruction", base, data=make_synthetic("blobs10", 40, 20))
        status = {r["arm"]: r["status"] for r in out["rows"]}
        assert status["baseline"] == "ok" and status["cutout"] == "ok"
        assert status["mra"].startswith("failed: FileNotFoundError")
        assert (tmp_path / "comparison.csv").exists() and (tmp_path / "baseline_seed0").is_dir()

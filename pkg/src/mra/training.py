"""Pretraining, downstream classification, occlusion evaluation and ablation sweeps.

All randomness is derived from the run seed and a position (epoch, step or
sample index), so a run can be resumed or re-batched without changing the
random stream.
"""
from __future__ import annotations

import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import baselines
from .artifacts import METRIC_COLUMNS, RunDir
from .attention import MaskingPolicy
from .augment import AugmentorHandle, augment_batch, mask_only_batch
from .checkpoint import from_training_state, load_checkpoint, save_checkpoint
from .classifier import ClassifierConfig, ResidualCNN, mixed_cross_entropy
from .config import RunConfig
from .data import Dataset, load_dataset
from .errors import ConfigError, NumericError, StateError, ValidationError
from .layers import check_finite, cosine_lr, make_optimizer, optimizer_step, step_lr
from .mae import MaeConfig, MaskedAutoencoder, batch_random_masks, pretrain_step, preset
from .viz import line_plot_png

log = logging.getLogger(__name__)


def set_determinism(seed: int, deterministic: bool = True):
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class MetricsRecord:
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    run_dir: Path | None = None
    model: torch.nn.Module | None = field(default=None, repr=False, compare=False)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


@dataclass
class PretrainResult:
    checkpoint: Path
    metrics: MetricsRecord
    model: MaskedAutoencoder
    step_losses: list[float]


# ---------------------------------------------------------------- models

def mae_config(cfg: RunConfig, in_chans: int = 3) -> MaeConfig:
    overrides = {"mask_ratio": cfg.mask_ratio, "loss_on": cfg.loss_on,
                 "image_size": cfg.image_size, "in_chans": in_chans, **cfg.mae_overrides}
    try:
        return preset(cfg.model_preset, **overrides)
    except TypeError as e:
        raise ConfigError(f"bad mae_overrides: {e}") from None


def load_mae(path) -> MaskedAutoencoder:
    ckpt = load_checkpoint(path, expected_kind="mae")
    model = MaskedAutoencoder(MaeConfig.from_dict(ckpt.config["mae"]))
    model.load_state_dict(ckpt.model_state())
    return model


def load_classifier(path) -> ResidualCNN:
    ckpt = load_checkpoint(path, expected_kind="classifier")
    model = ResidualCNN(ClassifierConfig(**ckpt.config["classifier"]))
    model.load_state_dict(ckpt.model_state())
    model.eval()
    return model


def make_handle(model: MaskedAutoencoder, cfg: RunConfig) -> AugmentorHandle:
    return AugmentorHandle(model, MaskingPolicy(cfg.strategy, cfg.aug_mask_ratio),
                           cfg.apply_probability)


# ---------------------------------------------------------------- pretraining

def _masked_eval_loss(model: MaskedAutoencoder, images: np.ndarray, seed: int) -> float:
    model.eval()
    keep = batch_random_masks(len(images), model.geometry.num_patches, model.config.mask_ratio,
                              np.random.default_rng([seed, 3]))
    with torch.no_grad():
        return float(model.reconstruction_loss(torch.from_numpy(images), keep))


def run_pretraining(cfg: RunConfig, resume=None, data: Dataset | None = None) -> PretrainResult:
    """Train the autoencoder with random masking; writes ``mae.ckpt`` and metrics."""
    cfg = cfg.materialize()
    if cfg.task != "pretrain":
        raise ConfigError(f"run_pretraining needs task 'pretrain', got {cfg.task!r}")
    set_determinism(cfg.seed, cfg.deterministic)
    data = data if data is not None else load_dataset(cfg.dataset, cfg.image_size, cfg.n_train,
                                                      cfg.n_eval, cfg.seed)
    x = data.train_x
    if len(x) == 0:
        raise ValidationError("pretraining set is empty")
    run = RunDir(cfg.out_dir, cfg.hash())
    run.write_text("config.json", cfg.dumps() + "\n")

    mcfg = mae_config(cfg, in_chans=x.shape[-1])
    model = MaskedAutoencoder(mcfg)
    opt = make_optimizer(model.parameters(), cfg.optimizer, cfg.lr, cfg.momentum,
                         cfg.weight_decay)
    step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume, expected_kind="mae")
        if ckpt.config["mae"] != mcfg.to_dict():
            raise ConfigError(f"{resume}: autoencoder config differs from the run config")
        model.load_state_dict(ckpt.model_state())
        opt.load_state_dict(ckpt.optimizer_state())
        step = int(ckpt.step)

    spe = math.ceil(len(x) / cfg.batch_size)
    schedule_steps = cfg.epochs * spe
    stop = schedule_steps if cfg.max_steps is None else min(cfg.max_steps, schedule_steps)
    eval_x = data.eval_x[:256] if len(data.eval_x) else x[:256]
    ckpt_path = run.path("mae.ckpt")
    config_doc = {"mae": mcfg.to_dict(), "run": cfg.identity()}
    rows, timing, step_losses = [], [], []

    def save():
        ck = from_training_state("mae", config_doc, model, opt,
                                 {"scheme": "seed+step", "seed": cfg.seed, "step": step}, step)
        save_checkpoint(ck, ckpt_path)
        run.record("mae.ckpt")

    epoch_losses, t0 = [], time.perf_counter()
    eval_losses = []
    try:
        while step < stop:
            epoch, offset = divmod(step, spe)
            order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(x))
            idx = order[offset * cfg.batch_size:(offset + 1) * cfg.batch_size]
            lr = _lr(cfg, step, schedule_steps)
            loss = pretrain_step(model, torch.from_numpy(x[idx]), opt,
                                 np.random.default_rng([cfg.seed, 2, step]), lr=lr)
            step += 1
            step_losses.append(loss)
            epoch_losses.append(loss)
            if step % spe == 0 or step == stop:
                ep = (step - 1) // spe + 1
                seconds = time.perf_counter() - t0
                eval_losses.append(_masked_eval_loss(model, eval_x, cfg.seed))
                rows.append({"epoch": ep, "train_loss": float(np.mean(epoch_losses)),
                             "train_acc": None, "eval_acc": None,
                             "seconds": None if cfg.deterministic else seconds})
                timing.append({"epoch": ep, "seconds": seconds})
                log.info("pretrain epoch %d step %d loss %.5f eval %.5f", ep, step,
                         rows[-1]["train_loss"], eval_losses[-1])
                if ep % cfg.checkpoint_every == 0 or step == stop:
                    save()
                epoch_losses, t0 = [], time.perf_counter()
    except NumericError as e:
        kept = str(ckpt_path) if ckpt_path.exists() else "none"
        summary = {"status": "aborted", "error": str(e), "step": step, "last_checkpoint": kept}
        run.write_json("summary.json", summary)
        run.finalize()
        raise NumericError(f"pretraining aborted at step {step}: {e}; last good checkpoint: {kept}") from e

    if not ckpt_path.exists():
        save()
    metrics = MetricsRecord(rows, {
        "status": "ok", "task": "pretrain", "steps": step, "final_train_loss": rows[-1]["train_loss"] if rows else None,
        "eval_loss": eval_losses, "config_hash": cfg.hash(),
        "resumed": resume is not None,
    }, run.root)
    _write_metrics(run, metrics, timing, cfg)
    run.write_text("steps.csv", "step,loss\n" + "".join(
        f"{step - len(step_losses) + i + 1},{v!r}\n" for i, v in enumerate(step_losses)))
    if rows:
        run.write_bytes("loss_curve.png", line_plot_png(
            {"train": ([r["epoch"] for r in rows], [r["train_loss"] for r in rows])},
            "epoch", "masked-patch MSE"))
    run.finalize()
    return PretrainResult(ckpt_path, metrics, model, step_losses)


def _lr(cfg: RunConfig, step: int, total: int) -> float:
    if cfg.schedule == "cosine":
        return cosine_lr(cfg.lr, step, total, cfg.warmup_steps)
    return cfg.lr


def _write_metrics(run: RunDir, metrics: MetricsRecord, timing, cfg: RunConfig):
    run.write_csv("metrics.csv", metrics.rows, METRIC_COLUMNS)
    if cfg.deterministic:
        # wall-clock goes to a side file so metrics.csv stays reproducible
        run.write_csv("timing.csv", timing, ("epoch", "seconds"))
    run.write_json("summary.json", metrics.summary)


# ---------------------------------------------------------------- augmentation pipeline

def random_crop_flip(images: np.ndarray, indices, rng_seed: int, padding: int, flip: bool):
    """Zero-padded random crop and horizontal flip, one draw per sample index."""
    if padding == 0 and not flip:
        return images.copy()
    out = np.empty_like(images)
    h, w = images.shape[1:3]
    padded = np.pad(images, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    for j, i in enumerate(indices):
        g = np.random.default_rng([rng_seed, int(i)])
        dy, dx = g.integers(0, 2 * padding + 1, size=2)
        img = padded[j, dy:dy + h, dx:dx + w]
        if flip and g.random() < 0.5:
            img = img[:, ::-1]
        out[j] = img
    return out


class AugmentPipeline:
    """Applies one registry augmentor to a batch: (images, labels) -> mixed targets."""

    def __init__(self, cfg: RunConfig, handle: AugmentorHandle | None = None):
        self.name = cfg.augmentor
        self.cfg = cfg
        if self.name.startswith("mra") and handle is None:
            raise ConfigError(f"augmentor {self.name!r} requires a pretrained checkpoint")
        self.handle = handle
        self.mra_calls = 0

    def _mra(self, images, seed, indices):
        self.mra_calls += len(images)
        return augment_batch(images, self.handle, seed, indices)

    def _pairs(self, images, labels, seed, batch_no, indices, fn, alpha):
        partner = np.random.default_rng([seed, 7, batch_no]).permutation(len(images))
        out, lam = np.empty_like(images), np.empty(len(images), dtype=np.float32)
        for j, i in enumerate(indices):
            g = np.random.default_rng([seed, 8, int(i)])
            k = partner[j]
            out[j], mixed = fn(images[j], labels[j], images[k], labels[k], alpha, rng=g)
            lam[j] = mixed.lam
        return out, labels.copy(), labels[partner].copy(), lam

    def __call__(self, images: np.ndarray, labels: np.ndarray, indices, seed: int, batch_no: int = 0):
        ones = np.ones(len(images), dtype=np.float32)
        c = self.cfg
        if self.name == "none":
            return images, labels, labels, ones
        if self.name == "cutout":
            out = np.stack([baselines.cutout(img, c.cutout_size, np.random.default_rng([seed, int(i)]))
                            for img, i in zip(images, indices)]) if len(images) else images.copy()
            return out, labels, labels, ones
        if self.name == "mixup":
            return self._pairs(images, labels, seed, batch_no, indices, baselines.mixup, c.mixup_alpha)
        if self.name == "cutmix":
            return self._pairs(images, labels, seed, batch_no, indices, baselines.cutmix, c.cutmix_alpha)
        if self.name == "mra":
            return self._mra(images, seed, indices), labels, labels, ones
        if self.name == "mra_mask_only":
            self.mra_calls += len(images)
            return mask_only_batch(images, self.handle, seed, indices), labels, labels, ones
        if self.name == "mra+cutmix":
            recon = self._mra(images, seed, indices)
            return self._pairs(recon, labels, seed, batch_no, indices, baselines.cutmix, c.cutmix_alpha)
        raise ConfigError(f"unknown augmentor {self.name!r}")


# ---------------------------------------------------------------- classification

@torch.no_grad()
def predict(model: torch.nn.Module, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    model.eval()
    out = [model(torch.from_numpy(np.ascontiguousarray(images[i:i + batch_size]))).argmax(1).numpy()
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model, images, labels, batch_size: int = 500) -> float:
    if len(images) == 0:
        return float("nan")
    return float((predict(model, images, batch_size) == labels).mean())


def occlude_center(images: np.ndarray, hole_size: int) -> np.ndarray:
    """Keep a centred ``hole_size`` square window; zero everything outside it."""
    h, w = images.shape[1:3]
    if not 0 <= hole_size <= min(h, w):
        raise ValidationError(f"hole size {hole_size} outside [0, {min(h, w)}]")
    out = np.zeros_like(images)
    top, left = (h - hole_size) // 2, (w - hole_size) // 2
    out[:, top:top + hole_size, left:left + hole_size] = \
        images[:, top:top + hole_size, left:left + hole_size]
    return out


def evaluate_occlusion(model, images: np.ndarray, labels: np.ndarray, hole_sizes,
                       batch_size: int = 500) -> list[tuple[int, float]]:
    """Top-1 error for each centred visible-window size."""
    curve = []
    for s in hole_sizes:
        pred = predict(model, occlude_center(images, int(s)), batch_size)
        curve.append((int(s), float((pred != labels).mean())))
    return curve


def run_classification(cfg: RunConfig, data: Dataset | None = None,
                       handle: AugmentorHandle | None = None) -> MetricsRecord:
    """Train the residual CNN with the configured augmentor; evaluate every epoch."""
    cfg = cfg.materialize()
    if cfg.task != "classify":
        raise ConfigError(f"run_classification needs task 'classify', got {cfg.task!r}")
    set_determinism(cfg.seed, cfg.deterministic)
    if cfg.augmentor.startswith("mra") and handle is None:
        if not cfg.checkpoint:
            raise ConfigError(f"augmentor {cfg.augmentor!r} needs a pretrained autoencoder "
                              "checkpoint (config 'checkpoint' or --checkpoint)")
        handle = make_handle(load_mae(cfg.checkpoint), cfg)
    data = data if data is not None else load_dataset(cfg.dataset, cfg.image_size, cfg.n_train,
                                                      cfg.n_eval, cfg.seed)
    x, y = data.train_x, data.train_y
    if len(x) == 0:
        raise ValidationError("training set is empty")
    run = RunDir(cfg.out_dir, cfg.hash())
    run.write_text("config.json", cfg.dumps() + "\n")

    hash_before = handle.parameter_hash() if handle is not None else None
    pipeline = AugmentPipeline(cfg, handle)
    torch.manual_seed(cfg.seed)
    ccfg = ClassifierConfig(num_classes=data.num_classes, width=cfg.classifier_width,
                            in_chans=x.shape[-1], image_size=cfg.image_size)
    model = ResidualCNN(ccfg)
    opt = make_optimizer(model.parameters(), cfg.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay)
    spe = math.ceil(len(x) / cfg.batch_size)
    rows, timing = [], []
    labels_before = y.copy()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = step_lr(cfg.lr, epoch, cfg.epochs) if cfg.schedule == "step" else \
            cosine_lr(cfg.lr, epoch * spe, cfg.epochs * spe) if cfg.schedule == "cosine" else cfg.lr
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(x))
        crop_seed, aug_seed = derive_seed(cfg.seed, 4, epoch), derive_seed(cfg.seed, 5, epoch)
        model.train()
        tot_loss, tot_correct, seen = 0.0, 0.0, 0
        for b in range(spe):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            imgs = random_crop_flip(x[idx], idx, crop_seed, cfg.crop_padding, cfg.flip)
            imgs, la, lb, lam = pipeline(imgs, y[idx], idx, aug_seed, b)
            xb = torch.from_numpy(np.ascontiguousarray(imgs))
            la_t, lb_t = torch.from_numpy(la), torch.from_numpy(lb)
            lam_t = torch.from_numpy(lam)
            opt.zero_grad(set_to_none=True)
            logits = model(xb)
            loss = mixed_cross_entropy(logits, la_t, lb_t, lam_t)
            check_finite(loss.detach(), "classification loss")
            loss.backward()
            optimizer_step(opt, lr)
            pred = logits.detach().argmax(1)
            tot_correct += float((lam_t * (pred == la_t) + (1 - lam_t) * (pred == lb_t)).sum())
            tot_loss += float(loss.detach()) * len(idx)
            seen += len(idx)
        eval_acc = accuracy(model, data.eval_x, data.eval_y)
        seconds = time.perf_counter() - t0
        rows.append({"epoch": epoch + 1, "train_loss": tot_loss / seen, "train_acc": tot_correct / seen,
                     "eval_acc": eval_acc, "seconds": None if cfg.deterministic else seconds})
        timing.append({"epoch": epoch + 1, "seconds": seconds})
        log.info("classify[%s] epoch %d loss %.4f train %.4f eval %.4f", cfg.augmentor, epoch + 1,
                 rows[-1]["train_loss"], rows[-1]["train_acc"], eval_acc)

    if not np.array_equal(labels_before, y):
        raise StateError("stored labels were modified during training")
    hash_after = handle.parameter_hash() if handle is not None else None
    if hash_before != hash_after:
        raise StateError("augmentor parameters changed during downstream training")

    curve = evaluate_occlusion(model, data.eval_x, data.eval_y, cfg.hole_sizes) \
        if len(data.eval_x) else []
    evals = [r["eval_acc"] for r in rows]
    best = int(np.nanargmax(evals)) if len(evals) and not np.all(np.isnan(evals)) else 0
    summary = {
        "status": "ok", "task": "classify", "augmentor": cfg.augmentor, "dataset": data.name,
        "final_eval_acc": evals[-1], "best_eval_acc": evals[best], "best_epoch": best + 1,
        "augment_calls": pipeline.mra_calls, "augmentor_hash_before": hash_before,
        "augmentor_hash_after": hash_after, "config_hash": cfg.hash(),
        "num_params": sum(p.numel() for p in model.parameters()),
        "occlusion": [{"hole_size": s, "error": e} for s, e in curve],
    }
    metrics = MetricsRecord(rows, summary, run.root, model)
    _write_metrics(run, metrics, timing, cfg)
    run.write_csv("occlusion.csv", [{"hole_size": s, "error": e} for s, e in curve],
                  ("hole_size", "error"))
    save_checkpoint(from_training_state("classifier", {"classifier": ccfg.to_dict(), "run": cfg.identity()},
                                        model, opt, {"scheme": "seed+epoch", "seed": cfg.seed},
                                        cfg.epochs * spe), run.path("classifier.ckpt"))
    run.record("classifier.ckpt")
    run.write_bytes("eval_curve.png", line_plot_png(
        {cfg.augmentor: ([r["epoch"] for r in rows], evals)}, "epoch", "eval top-1"))
    if curve:
        run.write_bytes("occlusion.png", line_plot_png(
            {cfg.augmentor: ([s for s, _ in curve], [e for _, e in curve])}, "hole size", "top-1 error"))
    run.finalize()
    return metrics


# ---------------------------------------------------------------- ablations

SUITES = {
    "mask_ratio": ("mask_ratio", {f"ratio_{r}": {"mask_ratio": r} for r in (0.2, 0.4, 0.6, 0.8)}),
    "mask_strategy": ("strategy", {
        "baseline": {"augmentor": "none"}, "mask_low": {"strategy": "mask_low"},
        "mask_high": {"strategy": "mask_high"}, "random": {"strategy": "random"}}),
    "reconstruction": ("augmentor", {
        "baseline": {"augmentor": "none"}, "cutout": {"augmentor": "cutout"},
        "mra_mask_only": {"augmentor": "mra_mask_only"}, "mra": {"augmentor": "mra"}}),
    "pretrain_epochs": ("pretrain_epochs", {}),  # arms scale the base value, see suite_arms
    "model_size": ("model_preset", {p: {"model_preset": p} for p in
                                    ("mae-mini-desk", "mae-base-desk", "mae-large-desk")}),
}
PRETRAIN_KEYS = {"mask_ratio", "model_preset", "pretrain_epochs", "mae_overrides", "loss_on"}
COMPARISON_COLUMNS = ("arm", "seed", "swept_key", "swept_value", "status", "final_eval_acc",
                      "best_eval_acc", "probe_sha256", "run_dir")


def suite_arms(suite: str, base: RunConfig) -> dict[str, RunConfig]:
    if suite not in SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; known: {sorted(SUITES)}")
    base = base.materialize()
    key, arms = SUITES[suite]
    if suite == "pretrain_epochs":
        e = base.pretrain_epochs
        arms = {f"epochs_{m}": {"pretrain_epochs": m} for m in
                sorted({max(1, e // 2), e, 4 * e})}
    if suite != "reconstruction" and base.augmentor == "none":
        base = replace(base, augmentor="mra")
    out = {}
    for name, change in arms.items():
        arm = replace(base, **change)
        diff = base.diff(arm)
        if len(diff) > 1 or not set(diff) <= {key, "augmentor"}:
            raise ConfigError(f"arm {name!r} differs from the base config in {diff}")
        out[name] = arm
    return out


def probe_batch(cfg: RunConfig, data: Dataset, handle, n: int = 8) -> np.ndarray:
    """The arm's augmentor applied (without crop/flip) to the first ``n`` eval images."""
    src = data.eval_x if len(data.eval_x) else data.train_x
    ys = data.eval_y if len(data.eval_x) else data.train_y
    pipeline = AugmentPipeline(cfg, handle)
    out, *_ = pipeline(src[:n], ys[:n], np.arange(min(n, len(src))), derive_seed(cfg.seed, 9), 0)
    return out


def run_ablation(suite: str, base: RunConfig, seeds=None, out_dir=None,
                 data: Dataset | None = None) -> dict:
    """Run every arm of ``suite`` (x seeds); failures are recorded and the sweep continues."""
    base = base.materialize()
    if base.task != "classify":
        raise ConfigError("ablation base config must have task 'classify'")
    root = RunDir(out_dir or base.out_dir, base.hash())
    arms = suite_arms(suite, base)
    key = SUITES[suite][0]
    seeds = list(seeds) if seeds else [base.seed]
    data = data if data is not None else load_dataset(base.dataset, base.image_size, base.n_train,
                                                      base.n_eval, base.seed)
    shared: dict[str, MaskedAutoencoder] = {}

    def model_for(name: str, arm: RunConfig):
        sweeps_pretraining = key in PRETRAIN_KEYS
        tag = name if sweeps_pretraining else "shared"
        if tag in shared:
            return shared[tag]
        if arm.checkpoint and not sweeps_pretraining:
            model = load_mae(arm.checkpoint)
        else:
            pre = arm.pretrain_config(str(root.path(f"pretrain/{tag}")))
            model = run_pretraining(pre, data=data).model
        shared[tag] = model
        return model

    rows, probes = [], {}
    for name, arm in arms.items():
        value = getattr(arm, key) if key != "augmentor" else arm.augmentor
        try:
            h = make_handle(model_for(name, arm), arm) if arm.augmentor.startswith("mra") else None
            probe = probe_batch(arm, data, h)
            buf = io.BytesIO()
            np.save(buf, probe)
            probe_file = root.write_bytes(f"{name}_probe.npy", buf.getvalue())
            probes[name] = probe_file
            probe_sha = hashlib.sha256(probe.tobytes()).hexdigest()
        except Exception as e:  # noqa: BLE001 - the suite records and continues
            log.exception("arm %s setup failed", name)
            for s in seeds:
                rows.append({"arm": name, "seed": s, "swept_key": key, "swept_value": value,
                             "status": f"failed: {type(e).__name__}: {e}"})
            continue
        for s in seeds:
            run_dir = root.path(f"{name}_seed{s}")
            arm_s = replace(arm, seed=s, out_dir=str(run_dir))
            row = {"arm": name, "seed": s, "swept_key": key, "swept_value": value,
                   "probe_sha256": probe_sha, "run_dir": run_dir.name}
            try:
                m = run_classification(arm_s, data=data, handle=h)
                row.update(status="ok", final_eval_acc=m.summary["final_eval_acc"],
                           best_eval_acc=m.summary["best_eval_acc"], _rows=m.rows)
            except Exception as e:  # noqa: BLE001
                log.exception("arm %s seed %s failed", name, s)
                row["status"] = f"failed: {type(e).__name__}: {e}"
            rows.append(row)

    root.write_csv("comparison.csv", rows, COMPARISON_COLUMNS)
    summary = []
    for name in arms:
        ok = [r for r in rows if r["arm"] == name and r["status"] == "ok"]
        summary.append({"arm": name, "runs_ok": len(ok),
                        "mean_final_eval_acc": float(np.mean([r["final_eval_acc"] for r in ok])) if ok else None,
                        "mean_best_eval_acc": float(np.mean([r["best_eval_acc"] for r in ok])) if ok else None})
    root.write_csv("comparison_summary.csv", summary,
                   ("arm", "runs_ok", "mean_final_eval_acc", "mean_best_eval_acc"))
    series = {}
    for name in arms:
        curves = [r["_rows"] for r in rows if r["arm"] == name and "_rows" in r]
        if curves:
            epochs = [x["epoch"] for x in curves[0]]
            series[name] = (epochs, list(np.mean([[x["eval_acc"] for x in c] for c in curves], axis=0)))
    if series:
        root.write_bytes("curves.png", line_plot_png(series, "epoch", "eval top-1", suite))
    root.write_json("ablation.json", {"suite": suite, "swept_key": key, "seeds": seeds,
                                      "arms": {n: base.diff(a) for n, a in arms.items()}})
    root.finalize()
    for r in rows:
        r.pop("_rows", None)
    return {"rows": rows, "summary": summary, "root": root.root, "probes": probes}

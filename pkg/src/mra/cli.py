"""Command line entry point: ``mra <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .artifacts import RunDir
from .augment import triplets
from .checkpoint import load_checkpoint
from .config import AUGMENTORS, RunConfig
from .attention import STRATEGIES
from .data import load_dataset
from .errors import MRAError
from .training import (SUITES, evaluate_occlusion, load_classifier, load_mae, make_handle,
                       run_ablation, run_classification, run_pretraining, set_determinism)
from .viz import image_grid, line_plot_png, png_bytes

log = logging.getLogger("mra")


def _common(p: argparse.ArgumentParser, mask_ratio=True):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--dataset", help="dataset source, e.g. synthetic:blobs10 or cifar10")
    if mask_ratio:
        p.add_argument("--mask-ratio", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mra", description="Mask-reconstruct augmentation experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain the masked autoencoder")
    _common(p)
    p.add_argument("--resume", help="continue from an autoencoder checkpoint")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("train", help="train the downstream classifier")
    _common(p)
    p.add_argument("--checkpoint", help="pretrained autoencoder checkpoint (mra arms)")
    p.add_argument("--augmentor", choices=AUGMENTORS)
    p.add_argument("--strategy", choices=STRATEGIES)

    p = sub.add_parser("augment-dump", help="write original | masked | reconstructed grid")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("-n", type=int, default=8, help="number of images (grid rows)")
    p.add_argument("--scale", type=int, default=4, help="pixel upscaling in the grid")

    p = sub.add_parser("eval-occlusion", help="top-1 error under centred-window occlusion")
    _common(p, mask_ratio=False)
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint")
    p.add_argument("--hole-sizes", type=int, nargs="+")

    p = sub.add_parser("ablate", help="run an ablation suite")
    _common(p)
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--checkpoint")
    p.add_argument("--augmentor", choices=AUGMENTORS)
    p.add_argument("--strategy", choices=STRATEGIES)

    p = sub.add_parser("inspect", help="describe a checkpoint or run directory")
    p.add_argument("path")
    return parser


def _config(args, task: str) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {"task": task}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["out_dir"] = args.out
    if args.dataset:
        changes["dataset"] = args.dataset
    for flag in ("checkpoint", "augmentor", "strategy"):
        if getattr(args, flag, None) is not None:
            changes[flag] = getattr(args, flag)
    if getattr(args, "max_steps", None) is not None:
        changes["max_steps"] = args.max_steps
    if getattr(args, "hole_sizes", None) is not None:
        changes["hole_sizes"] = args.hole_sizes
    if getattr(args, "mask_ratio", None) is not None:
        changes["mask_ratio" if task == "pretrain" else "aug_mask_ratio"] = args.mask_ratio
    return replace(cfg, **changes).validate().materialize()


def cmd_pretrain(args) -> dict:
    cfg = _config(args, "pretrain")
    res = run_pretraining(cfg, resume=args.resume)
    return {"checkpoint": str(res.checkpoint), "steps": res.metrics.summary["steps"],
            "final_train_loss": res.metrics.summary["final_train_loss"]}


def cmd_train(args) -> dict:
    cfg = _config(args, "classify")
    m = run_classification(cfg)
    return {k: m.summary[k] for k in ("final_eval_acc", "best_eval_acc", "augment_calls")} | \
        {"run_dir": str(m.run_dir)}


def cmd_augment_dump(args) -> dict:
    cfg = _config(args, "classify")
    set_determinism(cfg.seed, cfg.deterministic)
    handle = make_handle(load_mae(args.checkpoint), cfg)
    data = load_dataset(cfg.dataset, cfg.image_size, cfg.n_train, cfg.n_eval, cfg.seed)
    src = data.eval_x if len(data.eval_x) >= args.n else data.train_x
    if args.n < 1 or len(src) < args.n:
        raise MRAError(f"need {args.n} images, dataset split has {len(src)}")
    orig, masked, recon = triplets(src[:args.n], handle, cfg.seed)
    grid = image_grid([[o, m, r] for o, m, r in zip(orig, masked, recon)], scale=args.scale)
    run = RunDir(cfg.out_dir, cfg.hash())
    path = run.write_bytes("augment_grid.png", png_bytes(grid))
    run.write_json("augment_dump.json", {"rows": args.n, "columns": ["original", "masked", "reconstructed"],
                                         "strategy": cfg.strategy, "aug_mask_ratio": cfg.aug_mask_ratio,
                                         "checkpoint": str(args.checkpoint)})
    run.finalize()
    return {"grid": str(path), "rows": args.n, "columns": 3}


def cmd_eval_occlusion(args) -> dict:
    cfg = _config(args, "classify")
    set_determinism(cfg.seed, cfg.deterministic)
    model = load_classifier(args.checkpoint)
    data = load_dataset(cfg.dataset, cfg.image_size, cfg.n_train, cfg.n_eval, cfg.seed)
    curve = evaluate_occlusion(model, data.eval_x, data.eval_y, cfg.hole_sizes)
    run = RunDir(cfg.out_dir, cfg.hash())
    rows = [{"hole_size": s, "error": e} for s, e in curve]
    run.write_csv("occlusion.csv", rows, ("hole_size", "error"))
    run.write_bytes("occlusion.png", line_plot_png(
        {"model": ([s for s, _ in curve], [e for _, e in curve])}, "hole size", "top-1 error"))
    run.finalize()
    return {"curve": rows}


def cmd_ablate(args) -> dict:
    cfg = _config(args, "classify")
    res = run_ablation(args.suite, cfg, seeds=args.seeds)
    return {"root": str(res["root"]), "summary": res["summary"]}


def cmd_inspect(args) -> dict:
    path = Path(args.path)
    if path.is_dir():
        manifest = path / "manifest.json"
        return json.loads(manifest.read_text()) if manifest.exists() else {"files": sorted(
            p.name for p in path.iterdir())}
    ck = load_checkpoint(path)
    return {"kind": ck.kind, "step": ck.step, "config": ck.config, "rng_state": ck.rng_state,
            "tensors": {k: list(np.shape(v)) for k, v in ck.tensors.items()},
            "num_parameters": int(sum(np.size(v) for k, v in ck.tensors.items() if k.startswith("model/")))}


COMMANDS = {"pretrain": cmd_pretrain, "train": cmd_train, "augment-dump": cmd_augment_dump,
            "eval-occlusion": cmd_eval_occlusion, "ablate": cmd_ablate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](args)
    except (MRAError, OSError, KeyError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

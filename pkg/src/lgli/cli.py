"""Command-line harness: data generation, training, evaluation, serving."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import (
    evaluate_model,
    format_table,
    run_ablation,
    save_summary,
    sweep_alpha,
)
from .lpvl import (
    LocalizerConfig,
    TwoTowerEmbedder,
    localization_accuracy,
    localize,
    propose_regions,
    train_localizer,
)
from .model import LGLIModel, ModelConfig
from .scenes import Dataset, GenerationConfig, build_splits, write_image_raw
from .training import TrainConfig, train


def _parse_holdout(text):
    pairs = []
    if text:
        for item in text.split(","):
            shape, color = item.split(":")
            pairs.append((shape.strip(), color.strip()))
    return pairs


def cmd_generate_data(args) -> int:
    holdout = {}
    default = GenerationConfig()
    holdout["train"] = _parse_holdout(args.holdout) or default.holdout["train"]
    holdout["test"] = _parse_holdout(args.holdout_test) or default.holdout["test"]
    config = GenerationConfig(
        train_triplets=args.train, test_triplets=args.test, seed=args.seed,
        min_objects=args.min_objects, max_objects=args.max_objects, holdout=holdout,
    )
    manifest = build_splits(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    print(f"wrote {out / 'manifest.json'}: "
          f"{config.train_triplets} train / {config.test_triplets} test triplets, "
          f"{len(manifest.scenes)} scenes")
    if args.cache_images:
        ds = Dataset(manifest)
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for sid in ds.scene_ids():
            write_image_raw(img_dir / f"{sid}.raw", ds.render(sid))
        print(f"cached {len(ds.scene_ids())} rendered images under {img_dir}")
    return 0


def cmd_train_localizer(args) -> int:
    dataset = Dataset.load(args.data)
    config = LocalizerConfig(epochs=args.epochs, batch_size=args.batch,
                             lr=args.lr, seed=args.seed)
    params, history = train_localizer(dataset, config)
    save_checkpoint(args.out, params, {
        "kind": "localizer",
        "vocabulary": list(dataset.vocabulary),
        "train": {"epochs": config.epochs, "batch_size": config.batch_size,
                  "lr": config.lr, "scale": config.scale, "seed": config.seed},
        "final_loss": history[-1],
    })
    embedder = TwoTowerEmbedder(params, dataset.vocabulary)
    acc = localization_accuracy(dataset, embedder, split="test")
    print(f"saved {args.out}; final loss {history[-1]:.4f}, "
          f"test localization accuracy {acc * 100:.1f}%")
    if args.dump_overlays:
        from .service import scene_png

        overlay_dir = Path(args.dump_overlays)
        overlay_dir.mkdir(parents=True, exist_ok=True)
        dumped = 0
        for tp in dataset.split_triplets("test"):
            if tp.gt_box is None:
                continue
            image = dataset.render(tp.reference.scene_id)
            regions = propose_regions(tp.reference, image=image)
            chosen = localize(regions, tp.modification.localization_text_tokens, embedder)
            png = scene_png(image, None if chosen is None else chosen.box)
            name = "_".join(tp.modification.localization_text_tokens)
            (overlay_dir / f"{tp.reference.scene_id}_{name}.png").write_bytes(png)
            dumped += 1
            if dumped >= args.max_overlays:
                break
        print(f"dumped {dumped} localization overlays to {overlay_dir}")
    return 0


def _train_configs(args, dataset) -> tuple:
    model_cfg = ModelConfig(
        alpha=args.alpha,
        disable_mask=args.disable_mask,
        disable_cross_attention=args.disable_cross_attention,
        concat_fallback=args.concat_fallback,
        unbounded_text_gate=args.unbounded_text_gate,
        normalize=not args.no_normalize,
        similarity_scale=args.scale,
        proposer_mode=args.proposer,
        seed=args.seed,
        vocabulary=list(dataset.vocabulary),
    )
    train_cfg = TrainConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        val_every=args.val_every,
        loss_tol=None if args.loss_tol is not None and args.loss_tol < 0 else args.loss_tol,
        min_epochs=args.min_epochs,
        single_thread=args.single_thread,
    )
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    dataset = Dataset.load(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    localizer_params = None
    if args.localizer:
        localizer_params, _cfg = load_checkpoint(args.localizer)
    elif not (args.disable_mask or args.concat_fallback):
        print("no --localizer given; training one first", file=sys.stderr)
        localizer_params, _hist = train_localizer(
            dataset, LocalizerConfig(seed=args.seed)
        )
    model_cfg, train_cfg = _train_configs(args, dataset)
    train_cfg.log_path = str(out / "train_log.jsonl")
    result = train(dataset, model_cfg, train_cfg, localizer_params=localizer_params)
    extra = {"train": {"lr": train_cfg.lr, "epochs": train_cfg.epochs,
                       "batch_size": train_cfg.batch_size, "seed": train_cfg.seed},
             "best_val_r1": result.best_val_r1, "best_epoch": result.best_epoch}
    result.best_model().save(out / "best.ckpt", extra_config=extra)
    result.model.save(out / "final.ckpt", extra_config=extra)
    print(f"trained {len(result.history)} epochs "
          f"({'early stop' if result.stopped_early else 'epoch cap'}); "
          f"best val R@1 {result.best_val_r1:.1f} at epoch {result.best_epoch}")
    print(f"checkpoints: {out / 'best.ckpt'}, {out / 'final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    dataset = Dataset.load(args.data)
    model = LGLIModel.load(args.ckpt)
    ns = tuple(int(v) for v in args.r.split(","))
    table = evaluate_model(model, dataset, split=args.split, ns=ns)
    width = max(len(k) for k in table)
    for key, value in table.items():
        print(f"{key.ljust(width)}  {value:6.1f}")
    if args.json:
        Path(args.json).write_text(json.dumps(table, indent=1))
    return 0


def _experiment_args(sub):
    sub.add_argument("--data", required=True)
    sub.add_argument("--localizer", default=None)
    sub.add_argument("--alpha", type=float, default=1e-4)
    sub.add_argument("--lr", type=float, default=0.01)
    sub.add_argument("--epochs", type=int, default=50)
    sub.add_argument("--batch", type=int, default=32)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--scale", type=float, default=4.0)
    sub.add_argument("--val-every", type=int, default=1)
    sub.add_argument("--loss-tol", type=float, default=0.01,
                     help="relative loss-plateau threshold; <0 disables early stop")
    sub.add_argument("--min-epochs", type=int, default=10)
    sub.add_argument("--proposer", choices=("oracle", "heuristic"), default="oracle")
    sub.add_argument("--single-thread", action="store_true")
    sub.add_argument("--no-normalize", action="store_true")
    sub.add_argument("--unbounded-text-gate", action="store_true")
    sub.add_argument("--workers", type=int, default=None)


def _base_configs(args, dataset):
    model_cfg = ModelConfig(
        alpha=args.alpha, normalize=not args.no_normalize,
        unbounded_text_gate=args.unbounded_text_gate, similarity_scale=args.scale,
        proposer_mode=args.proposer, seed=args.seed,
        vocabulary=list(dataset.vocabulary),
    )
    train_cfg = TrainConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        val_every=args.val_every,
        loss_tol=None if args.loss_tol is not None and args.loss_tol < 0 else args.loss_tol,
        min_epochs=args.min_epochs,
        single_thread=args.single_thread,
    )
    return model_cfg, train_cfg


def _ensure_localizer(args, dataset) -> str:
    if args.localizer:
        return args.localizer
    print("no --localizer given; training one first", file=sys.stderr)
    params, _ = train_localizer(dataset, LocalizerConfig(seed=args.seed))
    path = Path(args.out) / "localizer.ckpt"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, params, {"kind": "localizer",
                                   "vocabulary": list(dataset.vocabulary)})
    return str(path)


def cmd_ablate(args) -> int:
    dataset = Dataset.load(args.data)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    model_cfg, train_cfg = _base_configs(args, dataset)
    localizer = _ensure_localizer(args, dataset)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    summary = run_ablation(dataset, model_cfg, train_cfg, seeds=seeds,
                           localizer_path=localizer,
                           save_dir=args.out if args.save_checkpoints else None,
                           max_workers=args.workers)
    print(format_table(summary))
    save_summary(summary, Path(args.out) / "ablation.json")
    print(f"wrote {Path(args.out) / 'ablation.json'}")
    return 0


def _parse_alpha_values(text: str) -> list:
    if ".." in text:
        lo, hi = text.split("..")
        e0 = int(round(np.log10(float(lo))))
        e1 = int(round(np.log10(float(hi))))
        step = -1 if e1 < e0 else 1
        return [10.0 ** e for e in range(e0, e1 + step, step)]
    return [float(v) for v in text.split(",")]


def cmd_sweep_alpha(args) -> int:
    dataset = Dataset.load(args.data)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    model_cfg, train_cfg = _base_configs(args, dataset)
    localizer = _ensure_localizer(args, dataset)
    values = _parse_alpha_values(args.values)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    summary = sweep_alpha(dataset, model_cfg, train_cfg, values=values, seeds=seeds,
                          localizer_path=localizer, max_workers=args.workers)
    print(format_table(summary))
    save_summary(summary, Path(args.out) / "alpha_sweep.json")
    print(f"wrote {Path(args.out) / 'alpha_sweep.json'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt, args.data, split=args.split, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgli",
                                description="language-guided local infiltration retrieval")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="build a synthetic dataset manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, default=2000)
    g.add_argument("--test", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--min-objects", type=int, default=2)
    g.add_argument("--max-objects", type=int, default=6)
    g.add_argument("--holdout", default="", help="train-split exclusions shape:color[,...]")
    g.add_argument("--holdout-test", default="", help="test-split exclusions shape:color[,...]")
    g.add_argument("--cache-images", action="store_true")
    g.set_defaults(func=cmd_generate_data)

    tl = sub.add_parser("train-localizer", help="fit the region/text embedder")
    tl.add_argument("--data", required=True)
    tl.add_argument("--out", required=True)
    tl.add_argument("--epochs", type=int, default=25)
    tl.add_argument("--batch", type=int, default=32)
    tl.add_argument("--lr", type=float, default=0.1)
    tl.add_argument("--seed", type=int, default=0)
    tl.add_argument("--dump-overlays", default=None)
    tl.add_argument("--max-overlays", type=int, default=32)
    tl.set_defaults(func=cmd_train_localizer)

    tr = sub.add_parser("train", help="train the retrieval model")
    tr.add_argument("--out", required=True)
    tr.add_argument("--disable-mask", action="store_true")
    tr.add_argument("--disable-cross-attention", action="store_true")
    tr.add_argument("--concat-fallback", action="store_true")
    _experiment_args(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="recall table for a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--r", default="1,5,10")
    ev.add_argument("--split", default="test")
    ev.add_argument("--json", default=None)
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and score the four fusion arms")
    ab.add_argument("--out", required=True)
    ab.add_argument("--seeds", default="0,1,2")
    ab.add_argument("--save-checkpoints", action="store_true")
    _experiment_args(ab)
    ab.set_defaults(func=cmd_ablate)

    sw = sub.add_parser("sweep-alpha", help="mask-strength sensitivity sweep")
    sw.add_argument("--out", required=True)
    sw.add_argument("--values", default="1e-1..1e-9")
    sw.add_argument("--seeds", default="0")
    _experiment_args(sw)
    sw.set_defaults(func=cmd_sweep_alpha)

    sv = sub.add_parser("serve", help="run the retrieval HTTP service")
    sv.add_argument("--ckpt", required=True)
    sv.add_argument("--data", required=True)
    sv.add_argument("--port", type=int, default=8080)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--split", default="test")
    sv.add_argument("--static", default=None)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Batch command-line front end for the whole pipeline.

Subcommands cover the three stages end to end: synthesize a toy dataset,
train a diffusion configuration, generate samples offline, merge generated
sets with the originals, train and evaluate the depth estimator, compare
dataset embeddings, and render planes to PPM images.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .diffusion import (
    DiffusionConfig,
    load_checkpoint,
    sample,
    save_checkpoint,
    train_denoiser,
    write_loss_log,
)
from .errors import D4dError, ParameterError
from .featspace import (
    DEFAULT_EXTRACTOR_SEED,
    FeatureExtractor,
    distance_report,
    embed_dataset,
    write_distance_report,
)
from .mde import (
    difference_map,
    evaluate,
    load_mde_checkpoint,
    save_mde_checkpoint,
    train_mde,
    write_metrics_json,
)
from .rgbd import (
    dataset_from_array,
    make_synthetic_dataset,
    merge_s3,
    read_dataset,
    write_dataset,
    write_manifest,
)
from .render import apply_colormap, rgb_to_pixels, write_ppm
from .rng import derive_seed
from .schedules import make_schedule
from .mde import MdeNet  # noqa: F401  (re-export convenience for scripts)

GENERATE_SHARD_SIZE = 32


def _parse_res(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ParameterError(f"resolution must look like 16x12, got {text!r}") from None


def _default_threads() -> int:
    env = os.environ.get("D4D_THREADS", "1")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


# -- subcommand bodies -----------------------------------------------------


def cmd_synth(args) -> int:
    ds = make_synthetic_dataset(
        count=args.count,
        width=args.res[0],
        height=args.res[1],
        n_shapes=args.shapes,
        seed=args.seed,
        max_depth_m=args.max_depth,
    )
    write_dataset(ds, args.out)
    write_manifest(ds, str(args.out) + ".manifest.jsonl")
    print(f"wrote {len(ds)} samples ({ds.width}x{ds.height}) to {args.out}")
    return 0


def cmd_train_diffusion(args) -> int:
    data = read_dataset(args.data)
    cfg = DiffusionConfig.preset(
        args.config, T=args.T, width=data.width, height=data.height, seed=args.seed
    )
    net, rows = train_denoiser(
        cfg,
        data.stack(),
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    save_checkpoint(args.out, cfg, net, args.seed, extra={"max_depth_m": data.max_depth_m})
    log_path = args.loss_log or str(args.out) + ".loss.csv"
    write_loss_log(rows, log_path)
    final = rows[-1][2] if rows else float("nan")
    print(f"trained {args.config} for {args.epochs} epochs, final loss {final:.6f}")
    return 0


def cmd_generate(args) -> int:
    cfg, net, _, extra = load_checkpoint(args.ckpt)
    sched = make_schedule(cfg.schedule_kind, cfg.T)
    images = sample(
        cfg,
        sched,
        net,
        count=args.count,
        seed=args.seed,
        sigma_kind=args.sigma,
        shard_size=GENERATE_SHARD_SIZE,
        threads=args.threads,
    )
    seeds = [
        derive_seed(args.seed, f"generate/shard-{i // GENERATE_SHARD_SIZE}")
        for i in range(args.count)
    ]
    ds = dataset_from_array(
        images,
        max_depth_m=float(extra.get("max_depth_m", 10.0)),
        provenance=cfg.provenance,
        seeds=seeds,
    )
    write_dataset(ds, args.out)
    write_manifest(ds, str(args.out) + ".manifest.jsonl")
    print(f"generated {len(ds)} samples tagged {cfg.provenance} to {args.out}")
    return 0


def cmd_merge(args) -> int:
    original = read_dataset(args.original) if args.original else None
    merged = merge_s3(
        original,
        read_dataset(args.s1),
        read_dataset(args.s2),
        add_count=args.add,
        include_original=original is not None,
        seed=args.seed,
    )
    write_dataset(merged, args.out)
    write_manifest(merged, str(args.out) + ".manifest.jsonl")
    counts = merged.provenance_counts()
    print(f"merged {len(merged)} samples to {args.out} ({counts})")
    return 0


def cmd_train_mde(args) -> int:
    data = read_dataset(args.data)
    net, rows = train_mde(
        None,
        data,
        epochs=args.epochs,
        base_lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
        augment=not args.no_augment,
    )
    save_mde_checkpoint(args.out, net, args.seed)
    log_path = args.loss_log or str(args.out) + ".loss.csv"
    write_loss_log(rows, log_path)
    final = rows[-1][2] if rows else float("nan")
    print(f"trained depth estimator for {args.epochs} epochs, final loss {final:.6f}")
    return 0


def cmd_eval(args) -> int:
    net, _ = load_mde_checkpoint(args.ckpt)
    data = read_dataset(args.data)
    metrics = evaluate(net, data)
    write_metrics_json(metrics, args.out)
    print(
        f"rmse {metrics.rmse:.4f} m, mae {metrics.mae:.4f} m, abs_rel {metrics.abs_rel:.4f}, "
        f"d1 {metrics.delta1:.4f}, d2 {metrics.delta2:.4f}, d3 {metrics.delta3:.4f}"
    )
    return 0


def cmd_featdist(args) -> int:
    a = read_dataset(args.a)
    b = read_dataset(args.b)
    extractor = FeatureExtractor(seed=args.extractor_seed)
    emb_a = embed_dataset(a, extractor, args.channel, source=Path(args.a).stem)
    emb_b = embed_dataset(b, extractor, args.channel, source=Path(args.b).stem)
    report = distance_report(emb_a, emb_b, args.channel, args.extractor_seed)
    write_distance_report(report, args.out)
    print(f"ed {report['ed']:.6f}, hd {report['hd']:.6f} ({args.channel})")
    return 0


def cmd_render(args) -> int:
    data = read_dataset(args.data)
    if not 0 <= args.index < len(data):
        raise ParameterError(f"index {args.index} out of range for {len(data)} samples")
    s = data.samples[args.index]
    if args.mode == "rgb":
        pixels = rgb_to_pixels(s.rgb)
    elif args.mode == "depth":
        pixels = apply_colormap(s.depth)
    else:  # diff
        if not args.pred:
            raise ParameterError("--pred is required for diff mode")
        pred = read_dataset(args.pred)
        if not 0 <= args.index < len(pred):
            raise ParameterError(f"index {args.index} out of range for {len(pred)} samples")
        diff, vmax = difference_map(
            s.depth_meters(), pred.samples[args.index].depth_meters()
        )
        pixels = apply_colormap(diff / vmax if vmax > 0 else diff)
    write_ppm(pixels, args.out)
    print(f"wrote {args.mode} image to {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d4d", description="RGBD diffusion augmentation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic RGBD dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--res", type=_parse_res, required=True, help="resolution, e.g. 16x12")
    p.add_argument("--shapes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", type=float, default=10.0, help="physical range in meters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-diffusion", help="train one diffusion configuration")
    p.add_argument("--config", choices=("s1", "s2"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("generate", help="sample a dataset from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", choices=("posterior", "beta"), default="posterior")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("merge", help="merge generated sets (optionally with originals)")
    p.add_argument("--original", default=None)
    p.add_argument("--s1", required=True)
    p.add_argument("--s2", required=True)
    p.add_argument("--add", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("train-mde", help="train the depth estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train_mde)

    p = sub.add_parser("eval", help="evaluate a depth estimator on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("featdist", help="embedding distances between two datasets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--channel", choices=("rgb", "depth"), default="rgb")
    p.add_argument("--extractor-seed", type=int, default=DEFAULT_EXTRACTOR_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featdist)

    p = sub.add_parser("render", help="render a sample plane to a PPM image")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mode", choices=("rgb", "depth", "diff"), required=True)
    p.add_argument("--pred", default=None, help="second dataset for diff mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (D4dError, OSError) as exc:
        print(f"d4d: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

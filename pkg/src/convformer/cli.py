"""Command-line surface: training, evaluation, accounting, diagnostics.

Subcommands: train, eval, count-params, flops, dump-attention, gradcheck,
synth.  Every run prints its resolved configuration; artifacts are written
atomically (temp file + rename).  Machine-readable numbers use 17 significant
digits.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .data import load_clip, save_clip, synth_motion
from .model import (
    ConvFormerModel,
    ModelConfig,
    build_variant,
    count_params,
    estimate_flops,
    itemized_flops,
    itemized_params,
)
from .trainer import TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

GRADCHECK_TOLERANCE = 1e-4


def _add_model_flags(p):
    p.add_argument("--frames", type=int, default=9, help="receptive field T (odd)")
    p.add_argument("--dim", type=int, default=32, help="spatial embedding width")
    p.add_argument("--blocks-spatial", type=int, default=2, help="spatial block count")
    p.add_argument("--blocks-temporal", type=int, default=2, help="temporal block count")
    p.add_argument("--heads", type=int, default=8, help="attention heads")
    p.add_argument(
        "--kernels", type=str, default="7,7,7", help="comma-separated odd kernel sizes"
    )
    p.add_argument(
        "--variant",
        choices=("dynamic", "single_filter", "linear_baseline"),
        default="dynamic",
        help="attention variant",
    )
    p.add_argument("--dropout", type=float, default=0.2, help="aggregation dropout rate")
    p.add_argument(
        "--survival", type=float, default=0.8, help="stochastic-depth keep probability"
    )
    p.add_argument("--seed", type=int, default=0, help="seed for init and shuffling")


def _model_config(args):
    kernels = tuple(int(k) for k in args.kernels.split(","))
    return ModelConfig(
        frames=args.frames,
        joints=17,
        dim=args.dim,
        blocks_spatial=args.blocks_spatial,
        blocks_temporal=args.blocks_temporal,
        heads=args.heads,
        kernels=kernels,
        dropout=args.dropout,
        survival=args.survival,
        variant=args.variant,
    )


def _print_config(args):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(resolved, sort_keys=True, default=str))


def _require_file(path):
    if not os.path.isfile(path):
        print(f"error: input file not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(x):
    return f"{x:.17g}"


def cmd_train(args):
    _print_config(args)
    _require_file(args.data)
    clip = load_clip(args.data)
    config = _model_config(args)
    model = build_variant(config, seed=args.seed)
    cfg = TrainConfig(
        epochs=args.epochs,
        lr0=args.lr,
        decay=args.decay,
        batch_size=args.batch_size,
        seed=args.seed,
        augment_flip=not args.no_flip,
        eval_every=args.eval_every,
    )
    os.makedirs(args.out, exist_ok=True)
    log = train(model, clip, cfg, out_dir=args.out)
    last = log[-1]
    print(
        f"trained {cfg.epochs} epochs; final loss {_fmt(last['train_loss'])}"
        + (f"; eval MPJPE {_fmt(last['eval_mpjpe'])} mm" if last["eval_mpjpe"] != "" else "")
    )
    print(f"wrote {os.path.join(args.out, 'log.csv')} and model.ckpt")
    return EXIT_OK


def cmd_eval(args):
    _print_config(args)
    _require_file(args.checkpoint)
    _require_file(args.data)
    model = ConvFormerModel.load(args.checkpoint)
    clip = load_clip(args.data)
    report = evaluate(model, clip)
    for key in ("mpjpe", "p_mpjpe", "mpjve", "pck", "auc"):
        print(f"{key}: {_fmt(report[key])}")
    if args.out:
        from .metrics import write_metric_csv

        rows = [(clip.name, k, v) for k, v in report.items()]
        tmp = args.out + ".tmp"
        write_metric_csv(tmp, rows)
        os.replace(tmp, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_count_params(args):
    _print_config(args)
    config = _model_config(args)
    rows = itemized_params(config)
    total = count_params(config)
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:>12d}")
    print(f"{'total':<{width}}  {total:>12d}  ({total / 1e6:.2f} M)")
    assert total == sum(v for _, v in rows)
    return EXIT_OK


def cmd_flops(args):
    _print_config(args)
    config = _model_config(args)
    rows = itemized_flops(config)
    total = estimate_flops(config)
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:>14d}")
    print(f"{'total':<{width}}  {total:>14d}  ({total / 1e6:.0f} M)")
    assert total == sum(v for _, v in rows)
    return EXIT_OK


def cmd_dump_attention(args):
    _print_config(args)
    _require_file(args.checkpoint)
    _require_file(args.data)
    model = ConvFormerModel.load(args.checkpoint)
    clip = load_clip(args.data)
    if clip.meta.joints != model.config.joints:
        print(
            f"error: clip has {clip.meta.joints} joints, model expects {model.config.joints}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    if not 0 <= args.frame < len(clip):
        print(f"error: frame {args.frame} outside clip of {len(clip)} frames", file=sys.stderr)
        return EXIT_USAGE
    half = model.config.frames // 2
    idx = np.clip(np.arange(args.frame - half, args.frame + half + 1), 0, len(clip) - 1)
    window = clip.poses2d[idx]
    records = []
    model.forward(window[None], records=records)
    os.makedirs(args.out, exist_ok=True)
    for rec in records:
        name = f"attn_{rec.axis}_b{rec.block_index}_h{rec.head}.csv"
        path = os.path.join(args.out, name)
        tmp = path + ".tmp"
        np.savetxt(tmp, rec.matrix, delimiter=",", fmt="%.17g")
        os.replace(tmp, path)
    print(f"wrote {len(records)} attention maps to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    _print_config(args)
    from .gradcheck import run_suite

    results = run_suite(seeds=args.seeds)
    worst_name, worst = max(results.items(), key=lambda kv: kv[1])
    for name, err in results.items():
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name:<24} max rel. error {err:.3e}  {status}")
    if worst >= GRADCHECK_TOLERANCE:
        print(f"error: gradient check failed for {worst_name}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth(args):
    _print_config(args)
    clip = synth_motion(args.seed, args.frames)
    tmp = args.out + ".tmp"
    save_clip(clip, tmp)
    os.replace(tmp, args.out)
    print(f"wrote {args.out}: {len(clip)} frames, {clip.meta.joints} joints")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="convformer",
        description="Convolutional-attention 2D-to-3D pose lifting toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a clip file")
    _add_model_flags(p)
    p.add_argument("--data", required=True, help="input clip file")
    p.add_argument("--out", required=True, help="output directory for log and checkpoint")
    p.add_argument("--epochs", type=int, default=60, help="training epochs")
    p.add_argument("--lr", type=float, default=1e-3, help="initial learning rate")
    p.add_argument("--decay", type=float, default=0.95, help="per-epoch LR decay factor")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size")
    p.add_argument("--eval-every", type=int, default=0, help="evaluate every N epochs (0 = final only)")
    p.add_argument("--no-flip", action="store_true", help="disable horizontal flip augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a clip file")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="input clip file")
    p.add_argument("--out", default=None, help="optional metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count-params", help="itemized learnable-parameter table")
    _add_model_flags(p)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("flops", help="itemized forward-pass FLOPs estimate")
    _add_model_flags(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("dump-attention", help="export attention maps as CSV matrices")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="input clip file")
    p.add_argument("--frame", type=int, default=0, help="centre frame index")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    p.add_argument("--seeds", type=int, default=3, help="random seeds per operation")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic motion clip file")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--frames", type=int, default=2000, help="number of frames to generate")
    p.add_argument("--out", required=True, help="output clip path")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

"""Command line driver.

Subcommands: gen-data, train, eval, predict, gradcheck. Exit codes:
0 success, 1 configuration error, 2 data or checkpoint error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import TrainConfig, load_config
from .data import DatasetSpec, save_synthetic_dataset
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .gradcheck import check_params
from .losses import joint_loss
from .network import build_network
from .train import effective_weights, evaluate, predict, run_training


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxseg",
        description="Two-stream contextual attention segmentation network")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--n", type=int, default=200, help="number of samples")
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--channels", type=int, default=1, choices=(1, 3))
    g.add_argument("--min-objects", type=int, default=1)
    g.add_argument("--max-objects", type=int, default=3)
    g.add_argument("--overlap", type=float, default=0.5,
                   help="probability that a multi-object sample overlaps")
    g.add_argument("--noise", type=float, default=0.02)
    g.add_argument("--patch", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-frac", type=float, default=0.8)
    g.add_argument("--val-frac", type=float, default=0.1)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--data", dest="data_dir", help="dataset directory")
    t.add_argument("--out", dest="out_dir", help="run output directory")
    t.add_argument("--height", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--channels", type=int)
    t.add_argument("--patch", type=int)
    t.add_argument("--embed-dim", type=int, dest="embed_dim")
    t.add_argument("--depth", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--feat-channels", type=int, dest="feat_channels")
    t.add_argument("--se-reduction", type=int, dest="se_reduction")
    t.add_argument("--lambda-seg", type=float, dest="lambda_seg")
    t.add_argument("--lambda-boundary", type=float, dest="lambda_boundary")
    t.add_argument("--lambda-ric", type=float, dest="lambda_ric")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-boundary", action="store_true", default=None)
    t.add_argument("--no-transformer", action="store_true", default=None)
    t.add_argument("--no-ctx-attention", action="store_true", default=None)
    t.add_argument("--resume", action="store_true",
                   help="continue from the latest epoch checkpoint in --out")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="metrics CSV path (default: stdout only)")
    e.add_argument("--height", type=int, help="expected dataset height")
    e.add_argument("--width", type=int, help="expected dataset width")

    p = sub.add_parser("predict", help="segment one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="artifact directory")

    c = sub.add_parser("gradcheck",
                       help="finite-difference check of a reduced-scale model")
    c.add_argument("--no-boundary", action="store_true")
    c.add_argument("--no-transformer", action="store_true")
    c.add_argument("--no-ctx-attention", action="store_true")
    c.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def cmd_gen_data(args) -> int:
    spec = DatasetSpec(
        n_samples=args.n, height=args.height, width=args.width,
        channels=args.channels, min_objects=args.min_objects,
        max_objects=args.max_objects, overlap_prob=args.overlap,
        noise=args.noise, patch=args.patch, seed=args.seed)
    spec.validate()
    if not (0.0 <= args.train_frac and 0.0 <= args.val_frac
            and args.train_frac + args.val_frac <= 1.0):
        raise ConfigError(
            f"train/val fractions {args.train_frac}/{args.val_frac} must fit in [0, 1]")
    samples = save_synthetic_dataset(spec, args.out,
                                     split_fractions=(args.train_frac, args.val_frac))
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


TRAIN_OVERRIDE_KEYS = (
    "data_dir", "out_dir", "height", "width", "channels", "patch",
    "embed_dim", "depth", "heads", "feat_channels", "se_reduction",
    "lambda_seg", "lambda_boundary", "lambda_ric", "lr", "batch_size",
    "epochs", "seed", "no_boundary", "no_transformer", "no_ctx_attention")


def cmd_train(args) -> int:
    overrides = {key: getattr(args, key) for key in TRAIN_OVERRIDE_KEYS}
    config = load_config(args.config, overrides)
    result = run_training(config, resume=args.resume, echo=print)
    print(f"finished at step {result.step}; artifacts under {result.out_dir}")
    if result.best_val is not None:
        print(f"best validation DSC {result.best_val:.4f}")
    return 0


def cmd_eval(args) -> int:
    rows = evaluate(args.checkpoint, data_dir=args.data, split=args.split,
                    out_path=args.out, height=args.height, width=args.width)
    for row in rows:
        print(row)
    return 0


def cmd_predict(args) -> int:
    paths = predict(args.checkpoint, args.image, args.out)
    for name in ("mask", "prob", "boundary", "ric"):
        print(f"{name}: {paths[name]}")
    return 0


def cmd_gradcheck(args) -> int:
    from .data import generate_dataset, make_batch

    config = TrainConfig(
        height=16, width=16, patch=4, embed_dim=8, depth=2, heads=2,
        feat_channels=8, se_reduction=4, batch_size=2,
        no_boundary=args.no_boundary, no_transformer=args.no_transformer,
        no_ctx_attention=args.no_ctx_attention)
    model = build_network(config)
    rng = np.random.default_rng(1)
    for conv in (model.boundary_head.conv, model.transformer.context_conv,
                 model.decoder.head):
        conv.weight.data[:] = rng.standard_normal(conv.weight.shape) * 0.5
    model.transformer.region_fc.weight.data[:] = \
        rng.standard_normal(model.transformer.region_fc.weight.shape) * 0.5
    model.gate.fc1.weight.data[:] = np.abs(model.gate.fc1.weight.data) + 0.05

    spec = DatasetSpec(n_samples=2, height=16, width=16, patch=4, seed=3)
    batch = make_batch(generate_dataset(spec))
    weights = effective_weights(config)

    def loss():
        return joint_loss(model(batch.image), batch, weights)[0]

    errs = check_params(loss, list(model.named_parameters()))
    worst = max(errs, key=errs.get)
    print(f"checked {len(errs)} parameters; worst relative error "
          f"{errs[worst]:.3e} ({worst})")
    if errs[worst] > args.tolerance:
        raise NumericalError(
            f"gradient check failed: {worst} has relative error "
            f"{errs[worst]:.3e} > {args.tolerance}")
    print("gradient check passed")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Forge CLI.

    forge make-data --out DIR --train 2000 --test 300 --seed 7
    forge train --data DIR --epochs 12 --seed 7 --out model.batk \
                --fixtures fixtures.bin
"""

from __future__ import annotations

import argparse
import sys

from .data import generate_split, load_split
from .export import export_fixtures, export_weights, fold_input_scale
from .train import evaluate_raw, train_small_cnn


def _cmd_make_data(args) -> int:
    generate_split(f"{args.out}/train", args.train, args.seed, "tr")
    generate_split(f"{args.out}/test", args.test, args.seed + 1, "te")
    print(f"wrote {args.train} train / {args.test} test images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    model, acc = train_small_cnn(args.data, args.epochs, args.seed)
    print(f"held-out accuracy: {acc:.4f}")
    if acc < args.min_accuracy:
        print(f"error: accuracy below the {args.min_accuracy:.2f} gate", file=sys.stderr)
        return 1
    folded = fold_input_scale(model)
    test_x, test_y = load_split(f"{args.data}/test")
    folded_acc = evaluate_raw(folded, test_x, test_y)
    export_weights(folded, args.out)
    print(f"wrote weights to {args.out} (folded-model accuracy {folded_acc:.4f})")
    if args.fixtures:
        n = min(args.fixture_count, len(test_x))
        ids = [f"te{i:04d}" for i in range(n)]
        export_fixtures(folded, test_x[:n], test_y[:n], ids, args.fixtures)
        print(f"wrote {n} fixtures to {args.fixtures}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate the synthetic texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--test", type=int, default=300)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_make_data)

    p = sub.add_parser("train", help="train the reference CNN and export it")
    p.add_argument("--data", required=True, help="directory with train/ and test/ splits")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--fixtures", help="fixture file to write")
    p.add_argument("--fixture-count", type=int, default=32)
    p.add_argument("--min-accuracy", type=float, default=0.6)
    p.set_defaults(func=_cmd_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

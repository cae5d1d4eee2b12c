"""Command-line front end.

    batk attack     --model m.batk --data manifest.csv --attack boundary --out DIR
    batk sr-table   --model m.batk --data manifest.csv --out DIR
    batk compare    --model m.batk --data manifest.csv --out DIR
    batk gradcam    --model m.batk --data manifest.csv --samples a,b --out DIR
    batk model-info --model m.batk

Exit code 0 on a completed run, 2 on configuration errors, 1 on runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .attack import AttackConfig, default_epsilons, patch
from .harness import (
    DEFAULT_FRAME_WIDTH,
    DEFAULT_PATCH_SIZE,
    REPORT_WIDTHS,
    compare_attacks,
    gradcam_report,
    run_campaign,
    width_sr_table,
)
from .tensor import DOMAIN_01, DOMAIN_255
from .weights import load_model_file

ATTACK_KINDS = ("boundary", "patch", "frame", "whole")


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--model", required=True, help="weight file")
    p.add_argument("--data", required=True, help="dataset manifest CSV")
    p.add_argument("--epsilon", type=float, help="initial step size (default per pixel range)")
    p.add_argument("--min-epsilon", type=float, help="step size floor (default per pixel range)")
    p.add_argument("--decay", type=float, default=0.75, help="per-width step decay factor")
    p.add_argument("--max-width", type=int, default=40, help="exclusive width bound")
    p.add_argument("--inner-limit", type=int, help="FGSM steps per width (15 boundary, 50 others)")
    p.add_argument("--psnr-threshold", type=float, default=40.0, help="early-stop PSNR in dB")
    p.add_argument("--pixel-range", choices=("0-255", "0-1"),
                   help="override the model's declared pixel range")
    p.add_argument("--no-clip", action="store_true", help="skip clipping steps to the pixel range")
    p.add_argument("--seed", type=int, default=0, help="campaign seed")
    p.add_argument("--workers", type=int, default=1, help="parallel image workers")
    p.add_argument("--out", required=True, help="output directory")


def _build_config(args, model, attack_kind: str) -> AttackConfig:
    if args.pixel_range == "0-255":
        domain = DOMAIN_255
    elif args.pixel_range == "0-1":
        domain = DOMAIN_01
    else:
        domain = model.pixel_domain
    eps0_default, min_default = default_epsilons(domain)
    inner = args.inner_limit
    if inner is None:
        inner = 15 if attack_kind == "boundary" else 50
    return AttackConfig(
        epsilon0=args.epsilon if args.epsilon is not None else eps0_default,
        minimum=args.min_epsilon if args.min_epsilon is not None else min_default,
        decay=args.decay,
        max_width=args.max_width,
        inner_limit=inner,
        psnr_threshold=args.psnr_threshold,
        pixel_domain=domain,
        clip=not args.no_clip,
        seed=args.seed,
    )


def _cmd_attack(args) -> int:
    model = load_model_file(args.model)
    cfg = _build_config(args, model, args.attack)
    region = None
    if args.attack == "patch":
        side = args.patch_size
        region = patch(args.patch_top, args.patch_left, side, side)
    result = run_campaign(
        args.model, args.data, args.attack, cfg, args.out,
        region=region, workers=args.workers,
        timings=not args.no_timings, save_images=args.save_images,
    )
    print(json.dumps(result.summary["metrics"], indent=1, sort_keys=True))
    return 0


def _cmd_sr_table(args) -> int:
    model = load_model_file(args.model)
    cfg = _build_config(args, model, "boundary")
    widths = [int(w) for w in args.widths.split(",")] if args.widths else None
    table = width_sr_table(args.model, args.data, cfg, widths, args.out, args.workers)
    for w, sr in table:
        print(f"width {w:3d}  sr {sr:.4f}")
    return 0


def _cmd_compare(args) -> int:
    model = load_model_file(args.model)
    cfg = _build_config(args, model, "boundary")
    rows = compare_attacks(
        args.model, args.data, cfg, args.out,
        region_inner_limit=args.region_inner_limit,
        patch_size=args.patch_size, frame_width=args.frame_width, workers=args.workers,
    )
    for row in rows:
        print(
            f"{row['attack']:<9} sr {row['sr']:.4f}  mae {row['mae']}  "
            f"mse {row['mse']}  psnr {row['psnr_db']}"
        )
    return 0


def _cmd_gradcam(args) -> int:
    model = load_model_file(args.model)
    cfg = _build_config(args, model, "boundary")
    widths = [int(w) for w in args.widths.split(",")] if args.widths else list(REPORT_WIDTHS)
    samples = [s for s in args.samples.split(",") if s]
    gradcam_report(args.model, args.data, cfg, samples, args.out, widths=widths,
                   patch_size=args.patch_size, frame_width=args.frame_width)
    print(f"wrote attention report for {len(samples)} samples to {args.out}")
    return 0


def _cmd_model_info(args) -> int:
    model = load_model_file(args.model)
    print(f"input shape:  {model.input_shape}")
    print(f"classes:      {model.num_classes}")
    print(f"pixel domain: [{model.pixel_domain.lo}, {model.pixel_domain.hi}]")
    print(f"parameters:   {model.param_count()}")
    shape = model.input_shape
    for i, layer in enumerate(model.layers):
        shape = layer.output_shape(shape)
        hyper = " ".join(f"{k}={v}" for k, v in layer.hyper.items())
        print(f"  layer {i}: {layer.kind:<16} -> {shape} {hyper}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="run one attack campaign")
    _add_config_args(p)
    p.add_argument("--attack", choices=ATTACK_KINDS, default="boundary")
    p.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE)
    p.add_argument("--patch-top", type=int, default=0)
    p.add_argument("--patch-left", type=int, default=0)
    p.add_argument("--save-images", action="store_true", help="dump clean/adversarial images")
    p.add_argument("--no-timings", action="store_true",
                   help="write 0 wall times for byte-reproducible CSVs")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("sr-table", help="cumulative success rate by boundary width")
    _add_config_args(p)
    p.add_argument("--widths", help="comma-separated widths (default 1..max_width-1)")
    p.set_defaults(func=_cmd_sr_table)

    p = sub.add_parser("compare", help="boundary vs patch vs frame vs whole")
    _add_config_args(p)
    p.add_argument("--region-inner-limit", type=int, default=50)
    p.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE)
    p.add_argument("--frame-width", type=int, default=DEFAULT_FRAME_WIDTH)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("gradcam", help="attention overlays for chosen samples")
    _add_config_args(p)
    p.add_argument("--samples", required=True, help="comma-separated image ids")
    p.add_argument("--widths", help="comma-separated border widths")
    p.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE)
    p.add_argument("--frame-width", type=int, default=DEFAULT_FRAME_WIDTH)
    p.set_defaults(func=_cmd_gradcam)

    p = sub.add_parser("model-info", help="describe a weight file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_model_info)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``rfadv <command> [--config FILE] [--seed N] [--out DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import math
import sys

from .experiments import COMMANDS, ExperimentConfig

HELP = {
    "generate": "write the train and test datasets",
    "train": "train the classifier and save the model",
    "attack": "craft and save one perturbation (pgd, uaa or cuaa)",
    "sweep-eps": "accuracy against perturbation budget, with noise controls",
    "sweep-pan": "accuracy against noise added after the perturbation",
    "targeted": "targeted efficacy matrices",
    "ber": "bit error rates under perturbation and matched controls",
    "smartjam": "synchronised against unsynchronised perturbation delivery",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfadv", description="Adversarial attacks on a simulated modulation classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="JSON experiment configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--out", help="output directory for CSV reports, overrides the config")
        p.add_argument("--threads", type=int, help="worker threads for sweep points")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.threads is not None:
        if args.threads < 1:
            raise ValueError("--threads must be at least 1")
        cfg.threads = args.threads
    return cfg


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.4g}"
    return str(v)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    # file-format errors subclass ValueError
    try:
        cfg = load_config(args)
        report = COMMANDS[args.command](cfg)
    except (FileNotFoundError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"rfadv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for r in report.rows:
        cond = " ".join(f"{k}={_fmt(getattr(r, k))}" for k in ("scheme", "epsilon", "pan_db", "snr_db")
                        if _fmt(getattr(r, k)))
        print(f"{r.condition:>16s}  {r.metric:<20s} {r.value:10.4f}  {cond}")
    print(f"wrote {cfg.path('out')}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

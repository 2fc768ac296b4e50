"""Command-line entry point: ``dpgp {infer,calibrate,hyperparams,synth}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from dpgp import config as config_mod
from dpgp.experiments import run

logger = logging.getLogger("dpgp")

_HELP = {
    "infer": "private posterior fits across epsilon with RMSE and posterior dumps",
    "calibrate": "predictive-interval coverage of full and naive private posteriors",
    "hyperparams": "selection frequencies of private hyperparameter search",
    "synth": "write a synthetic regression dataset",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpgp", description="Differentially private sparse GP regression")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in config_mod.TASKS:
        p = sub.add_parser(task, help=_HELP[task])
        p.add_argument("--config", help="JSON config; omitted keys take the task defaults")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker threads for repeats")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.config:
            cfg = config_mod.load(args.config, args.task, args.seed)
        else:
            cfg = config_mod.resolve({}, args.task, args.seed)
        if args.workers is not None and args.task != "synth":
            cfg["workers"] = max(1, args.workers)
    except (config_mod.ConfigError, OSError, ValueError) as exc:
        print(f"dpgp: error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    paths = run(cfg, args.out)
    logger.info("%s finished in %.1f s", args.task, time.perf_counter() - start)
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())

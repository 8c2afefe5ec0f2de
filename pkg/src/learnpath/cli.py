"""Command line entry point.

    learnpath <command> [--config FILE] [--out DIR] [--seed N] [--jobs N]

Every command runs entirely from its built-in defaults when no config
file is given. Exit codes: 0 on success, 1 on a configuration problem,
2 when the command ran but a verification check failed.
"""

from __future__ import annotations

import argparse
import os
import sys

from learnpath.config import ConfigError, load_config
from learnpath.experiments import RUNNERS

_STRICT = {"ntk-verify"}  # failed checks flip the exit code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="learnpath",
        description="Training-path experiments on a synthetic Gaussian task.")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "gen-data": "sample, split, and optionally corrupt a dataset",
        "correlate": "supervision gap vs accuracy/calibration sweep",
        "paths": "record per-sample learning paths for a one-hot run",
        "distance-gap": "distance to p* vs distance to target by stage",
        "recovery": "flipped-label recovery curve for a filtered teacher",
        "distill": "student accuracy under competing supervision tables",
        "ntk-verify": "numerical checks of the SGD update decomposition",
        "zigzag": "path oscillation scores vs sample difficulty",
    }
    for name, desc in descriptions.items():
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="key = value overrides (defaults used if omitted)")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (default: out/<command>)")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed override")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for sweep commands")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, path=args.config, seed=args.seed)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 1
    out_dir = args.out or os.path.join("out", args.command)
    os.makedirs(out_dir, exist_ok=True)
    checks = RUNNERS[args.command](cfg, out_dir, jobs=args.jobs)
    failed = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(f"check {name}: {'pass' if ok else 'FAIL'} ({detail})")
    print(f"wrote {out_dir}")
    if failed and args.command in _STRICT:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

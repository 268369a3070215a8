"""Command line interface: `speclab <experiment> --config <file> [--workers N] [--out DIR]`.

Exit codes: 0 ok, 2 config error, 3 runtime invariant violation, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, ConfigError, parse_config
from .runner import EXIT_CONFIG, EXIT_IO, RunError, report, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speclab",
        description="Reproducible spectral-statistics experiments on random lattice operators",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--workers", type=int, default=None,
                       help="Monte Carlo worker threads (results are invariant to this)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
    rep = sub.add_parser("report", help="summarize one or more run manifests")
    rep.add_argument("manifests", nargs="*", help="paths to manifest.json files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        text, code = report(args.manifests)
        if text:
            print(text)
        return code
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text, experiment=args.command)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(cfg, workers=args.workers, out_dir=args.out)
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())

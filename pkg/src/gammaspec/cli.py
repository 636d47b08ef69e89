"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys

from .harness import KINDS, load_config, run_decode, run_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gammaspec", description="Single-photon gamma spectrometer simulator")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in (*KINDS, "decode"):
        p = sub.add_parser(verb)
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        if verb == "decode":
            p.add_argument("--input", required=True, help="event-stream file to dump")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "decode":
            config = json.loads(open(args.config).read()) if args.config else {}
            report = run_decode(args.input, args.seed, config)
        else:
            report = run_scenario(load_config(args.config, args.verb), args.seed)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = report.write(args.out)
    print(json.dumps({"kind": report.kind, "stats": report.stats}, sort_keys=True, default=str))
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

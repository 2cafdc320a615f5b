"""Command-line entry point: ``tsrlhf run --spec spec.json --out results/``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .experiments import EXIT_CONFIG, ExperimentSpec, run, write_error
from .mdp import ConfigurationError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsrlhf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment spec")
    p.add_argument("--spec", required=True, help="path to a JSON experiment spec")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the root seed")
    p.add_argument("--rounds", type=int, default=None, help="override the number of rounds T")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExperimentSpec.load(args.spec)
        overrides = {k: v for k, v in (("seed", args.seed), ("rounds", args.rounds)) if v is not None}
        if overrides:
            spec = ExperimentSpec.from_dict({**dataclasses.asdict(spec), **overrides})
    except (ConfigurationError, OSError, ValueError) as e:
        code = write_error(None, e, EXIT_CONFIG)
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": code}),
              file=sys.stderr)
        return code
    code = run(spec, args.out)
    if code:
        with open(f"{args.out}/error.json") as fh:
            sys.stderr.write(fh.read())
    return code


if __name__ == "__main__":
    sys.exit(main())

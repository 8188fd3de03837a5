"""Command-line entry point.

::

    dpsbench generate --config bench.yaml
    dpsbench tune     --config bench.yaml
    dpsbench run      --config bench.yaml
    dpsbench evaluate --config bench.yaml
    dpsbench report   --config bench.yaml
    dpsbench diagnose --config bench.yaml
    dpsbench all      --profile desk --out results/desk

Every stage resumes from what is already on disk.  The exit code is 0 only
when every requested cell completed.
"""

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .storage import StorageError
from . import pipeline

STAGES = {
    "generate": pipeline.generate,
    "tune": pipeline.tune,
    "run": pipeline.run,
    "evaluate": pipeline.evaluate,
    "report": pipeline.report,
    "diagnose": pipeline.diagnose,
}
ALL = ("generate", "tune", "run", "evaluate", "report")


def build_parser():
    parser = argparse.ArgumentParser(prog="dpsbench", description="Gold-standard benchmark for diffusion posterior sampling.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in list(STAGES) + ["all"]:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "generate, tune, run, evaluate, report")
        p.add_argument("--config", help="YAML config file (profile defaults when omitted)")
        p.add_argument("--profile", choices=["desk", "paper"], help="scale profile (overrides the file)")
        p.add_argument("--out", help="output directory (overrides the file)")
        p.add_argument("--seed-override", type=int, dest="seed", help="master seed (overrides the file)")
        p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config, args.profile, args.seed, args.out)
        stages = ALL if args.stage == "all" else (args.stage,)
        failures = 0
        for stage in stages:
            failures += STAGES[stage](config) or 0
    except (ConfigError, StorageError) as exc:
        print(f"dpsbench: {exc}", file=sys.stderr)
        return 2
    if failures:
        print(f"dpsbench: {failures} item(s) did not complete", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

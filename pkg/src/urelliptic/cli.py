"""Command-line driver.

Exit codes: 0 when every declared check passed, 2 when at least one failed,
1 on any execution error (invalid config, failed stage).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import STAGES, load_config
from .errors import ConfigInvalid, PipelineStageFailure

COMMANDS = STAGES + ("all",)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urelliptic", description="Grid diagnostics for elliptic measure and rectifiability.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--cache", help="solve cache directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed, unsigned 64-bit (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-cube classifiers")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .pipeline import Pipeline

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigInvalid("seed", "must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigInvalid("threads", "must be >= 1")
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
        pipe = Pipeline(cfg, out=args.out, cache=args.cache, threads=args.threads)
        stages = list(cfg.stages) if args.command == "all" else [args.command]
        if "report" not in stages:
            stages.append("report")
        summary = pipe.run(stages)
    except (ConfigInvalid, PipelineStageFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    failed = [c for c in summary.get("checks", []) if c["status"] == "fail"]
    for c in summary.get("checks", []):
        print(f"{c['status']:>7}  {c['metric']} {c['op']} {c['value']}  (observed {c['observed']})")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())

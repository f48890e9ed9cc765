#!/usr/bin/env python3
"""Run the pinned reference experiment and print its results table.

Equivalent to:

    crowdcount experiment --config configs/reference.json --out runs/reference

Takes a couple of minutes on a desktop CPU. Pass --out to choose a different
output directory, --seed to override the master seed.
"""

import argparse
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path,
                        default=ROOT / "configs" / "reference.json")
    parser.add_argument("--out", type=Path, default=ROOT / "runs" / "reference")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()

    sys.path.insert(0, str(ROOT / "src"))
    from crowdcount.pipeline import ExperimentConfig, run_experiment

    raw = json.loads(args.config.read_text())
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    report = run_experiment(cfg, args.out, config_echo=raw, quiet=args.quiet)
    print(f"\nartifacts in {args.out} "
          f"({report.wall_clock_seconds:.1f}s wall clock)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

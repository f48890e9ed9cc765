#!/usr/bin/env python3
"""Print the architecture and parameter summary stored in a checkpoint."""

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip())
    parser.add_argument("checkpoint", type=Path)
    args = parser.parse_args()

    sys.path.insert(0, str(ROOT / "src"))
    from crowdcount.nn import load_checkpoint

    net = load_checkpoint(args.checkpoint)
    print(net.describe())
    print(f"total parameters: {net.param_count():,}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

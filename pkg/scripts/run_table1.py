#!/usr/bin/env python3
"""Reproduce the noise-bound x agent-count study with the shipped config.

Usage:
    python scripts/run_table1.py [--out runs/table1] [--jobs N]

Writes table1.csv with one row per (noise bound, agent count) cell: the
group-averaged violation rate, the three bound slacks, and the fraction of
groups whose bound covered the pooled violation rate.
"""

import argparse
import os
import sys
from pathlib import Path

from cbfcert.cli import main as cli_main

REPO = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/table1")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    args = parser.parse_args()
    return cli_main(
        [
            "reproduce-table1",
            "--config", str(REPO / "configs" / "table1.json"),
            "--out", args.out,
            "--jobs", str(args.jobs),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())

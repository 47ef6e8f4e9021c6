#!/usr/bin/env python3
"""Sweep the alignment weight psi over {0, 2, 4, 6, 8, 10} with the shipped
three-agent interaction config (100 rollouts per value at noise bound 0.03).

Usage:
    python scripts/run_psi_sweep.py [--out runs/psi_sweep] [--jobs N]
"""

import argparse
import os
import sys
from pathlib import Path

from cbfcert.cli import main as cli_main

REPO = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/psi_sweep")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    args = parser.parse_args()
    return cli_main(
        [
            "sweep-psi",
            "--config", str(REPO / "configs" / "psi_sweep.json"),
            "--out", args.out,
            "--jobs", str(args.jobs),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())

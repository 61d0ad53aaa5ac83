#!/usr/bin/env python3
"""Run every example config in ``configs/`` through the CLI.

    python3 scripts/run_configs.py [--out results] [--only constants calderon]
"""
import argparse
import sys
import time
from pathlib import Path

from mwlab import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--only", nargs="*", help="subcommands to run (default: all with a config)")
    args = ap.parse_args()
    status = 0
    for path in sorted((ROOT / "configs").glob("*.ini")):
        command = path.stem
        if args.only and command not in args.only:
            continue
        t0 = time.perf_counter()
        rc = cli.main([command, "--config", str(path), "--out", args.out])
        print(f"  ({time.perf_counter() - t0:.1f} s)")
        status = max(status, rc)
    return status


if __name__ == "__main__":
    sys.exit(main())

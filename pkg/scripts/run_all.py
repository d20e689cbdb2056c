#!/usr/bin/env python3
"""Run every example config through the CLI and report exit codes.

Usage: python scripts/run_all.py [--out-root OUT]
"""

import argparse
import json
import os
import sys

from randerslab.cli import main as cli_main

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-root", default="out")
    args = parser.parse_args()

    failures = 0
    for fname in sorted(os.listdir(CONFIG_DIR)):
        if not fname.endswith(".json"):
            continue
        path = os.path.join(CONFIG_DIR, fname)
        with open(path) as fh:
            experiment = json.load(fh)["experiment"]
        out = os.path.join(args.out_root, experiment)
        print(f"== {experiment} ({fname}) -> {out}")
        code = cli_main([experiment, "--config", path, "--out", out])
        print(f"   exit code {code}")
        failures += code != 0
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

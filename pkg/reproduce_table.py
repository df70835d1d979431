#!/usr/bin/env python3
"""Generate a synthetic log, train the four variants on it and print the Precision@10 table"""

import argparse
import sys
import os
import time
from pathlib import Path

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from action_rnn.model import Variant
from cli.main import main as cli_main

VARIANTS = (Variant.NAVIGATION, Variant.EARLY, Variant.LATE, Variant.CLICKS)


def print_banner(work_dir: Path, iterations: int, sessions: int):
    """Print run information"""
    print("\n" + "=" * 70)
    print("🚀 Action-conditional RNN: desk-scale comparison")
    print("=" * 70)
    print(f"\n✓ Work directory: {work_dir}")
    print(f"✓ Sessions:       {sessions}")
    print(f"✓ Iterations:     {iterations} per variant")
    print(f"✓ Variants:       {', '.join(VARIANTS)}")
    print("=" * 70 + "\n")


def run(argv) -> int:
    code = cli_main([str(a) for a in argv])
    if code != 0:
        print(f"❌ step failed with exit code {code}: {' '.join(map(str, argv[:1]))}")
    return code


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", default="runs/table")
    parser.add_argument("--sessions", type=int, default=20000)
    parser.add_argument("--iterations", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    work = Path(args.work_dir)
    common = ["--seed", args.seed]
    if args.threads:
        common += ["--threads", args.threads]
    print_banner(work, args.iterations, args.sessions)

    started = time.perf_counter()
    log = work / "log.jsonl"
    print("🔧 Generating synthetic log...")
    if run(["gen", "--out", log, "--sessions", args.sessions, *common]):
        sys.exit(1)

    for variant in VARIANTS:
        print(f"🔧 Training {variant}...")
        if run([
            "train", "--data", log, "--out-dir", work / variant, "--variant", variant,
            "--iterations", args.iterations, *common,
        ]):
            sys.exit(1)

    # every run shares the seed, hence the same split and vocabulary
    first = work / VARIANTS[0]
    print("\n📊 Evaluating on the validation split...\n")
    code = run([
        "eval", "--checkpoint", *[work / v / "model.ckpt" for v in VARIANTS],
        "--data", first / "valid.jsonl", "--vocab", first / "vocab.tsv",
        "--report", work / "table.csv", *common,
    ])
    if code:
        sys.exit(code)
    print(f"\n✓ Report written to {work / 'table.csv'}")
    print(f"✓ Done in {time.perf_counter() - started:.0f}s")


if __name__ == "__main__":
    main()

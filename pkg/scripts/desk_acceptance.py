#!/usr/bin/env python3
"""
Full desk-scale run: synthesize, train, evaluate, benchmark, then check thresholds.

Steps:
  1. synth  32 training speakers x 5 styles x 4, plus 8 held-out speakers
  2. train  width-64 model (default 20k iterations)
  3. eval   100 held-out conversions with style swaps
  4. bench  Euler steps 1, 2, 5, 10, 20 over 20 held-out conversions

Usage:
    python scripts/desk_acceptance.py [--work DIR] [--iters N] [--seed S]

Writes everything under --work (default /tmp/stablevc_desk) and exits 1
when any threshold fails.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import polars as pl

from stablevc.checkpoint import load_checkpoint
from stablevc.cli import main as cli_main
from stablevc.evalkit import duration_mae
from stablevc.synthcorpus import read_corpus


def timed(label: str, argv: list[str]) -> float:
    t0 = time.perf_counter()
    code = cli_main(argv)
    elapsed = time.perf_counter() - t0
    print(f"  {label:<40} {elapsed:8.1f} s  (exit {code})", flush=True)
    if code != 0:
        sys.exit(code)
    return elapsed


def _value(summary: dict, key: str) -> float:
    """Summary entry with missing or undefined values (null in JSON) as NaN, so every comparison fails."""
    value = summary.get(key)
    return float("nan") if value is None else float(value)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--work", type=Path, default=Path("/tmp/stablevc_desk"))
    parser.add_argument("--iters", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    corpus_dir = args.work / "corpus"
    ckpt = args.work / "desk.ckpt"
    out_dir = args.work / "reports"
    common = ["--seed", str(args.seed), "--threads", str(args.threads), "--corpus-dir", str(corpus_dir)]

    print(f"Work dir : {args.work}")
    print(f"Iters    : {args.iters}")
    print()

    # ------------------------------------------------------------------ #
    # Pipeline                                                            #
    # ------------------------------------------------------------------ #
    print("=== Pipeline ===")
    timed("synth", ["synth", *common])
    train_argv = ["train", *common, "--checkpoint", str(ckpt), "--out-dir", str(out_dir)]
    train_argv += ["--iters", str(args.iters), "--lr", "5e-4", "--checkpoint-every", "1000", "--log-every", "500"]
    timed(f"train ({args.iters} iterations)", train_argv)
    timed("eval (100 cases)", ["eval", *common, "--checkpoint", str(ckpt), "--out-dir", str(out_dir)])
    timed("bench", ["bench", *common, "--checkpoint", str(ckpt), "--out-dir", str(out_dir)])

    # ------------------------------------------------------------------ #
    # Checks                                                              #
    # ------------------------------------------------------------------ #
    print("\n=== Checks ===")
    summary = json.loads((out_dir / "eval_summary.json").read_text())
    bench = pl.read_csv(out_dir / "bench.tsv", separator="\t").sort("steps")
    history = pl.read_csv(out_dir / "loss_history.csv")
    heldout = read_corpus(corpus_dir, split="heldout")
    mae = duration_mae(load_checkpoint(ckpt), heldout, rate=1.0)

    by_steps = {row["steps"]: row for row in bench.iter_rows(named=True)}
    smoothed_cfm = history.get_column("cfm").rolling_mean(window_size=200, min_samples=1)
    seconds = bench.get_column("seconds_per_frame").to_list()

    checks = [
        ("smoothed L_cfm below its first value", smoothed_cfm[-1] < history.get_column("cfm")[0]),
        ("duration MAE <= 1 frame (rate 1.0, held out)", mae <= 1.0),
        ("timbre closer to target in >= 90% of cases", _value(summary, "timbre_target_closer_rate") >= 0.9),
        ("median pitch correlation > 0.6", _value(summary, "pitch_corr_median") > 0.6),
        ("style swap follows new reference in >= 80%", _value(summary, "swap_follows_rate") >= 0.8),
        ("style swap drops target timbre by < 0.1", _value(summary, "swap_timbre_drop_mean") < 0.1),
        ("timbre cosine at 10 steps >= 1 step", by_steps[10]["timbre_cosine"] >= by_steps[1]["timbre_cosine"]),
        ("proxy loss at 10 steps <= 1 step", by_steps[10]["proxy_loss"] <= by_steps[1]["proxy_loss"]),
        ("per-frame time increases with steps", all(a < b for a, b in zip(seconds, seconds[1:]))),
    ]
    failed = 0
    for label, ok in checks:
        failed += not ok
        print(f"  [{'PASS' if ok else 'FAIL'}] {label}")

    print()
    print(f"  duration MAE            : {mae:.3f} frames")
    print(f"  timbre closer rate      : {summary['timbre_target_closer_rate']}")
    print(f"  median pitch corr       : {summary['pitch_corr_median']}")
    print(f"  swap follows rate       : {summary.get('swap_follows_rate')}")
    print(bench)
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()

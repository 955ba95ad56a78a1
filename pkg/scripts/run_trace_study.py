#!/usr/bin/env python3
"""Train per-style image-only models on a contrast-scaled style family and
correlate each style's Gram trace with its flicker on static scenes.

Writes trace_instability.csv (one row per style and tap) and spearman.csv
(one rank correlation per tap) under --out.
"""

import argparse
from pathlib import Path

from stylestab import fileio
from stylestab.study import DEFAULT_ALPHAS, StudyConfig, run_trace_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--steps-per-epoch", type=int, default=40)
    ap.add_argument("--n-scenes", type=int, default=5)
    args = ap.parse_args()

    cfg = StudyConfig(seed=args.seed, image_epochs=args.epochs,
                      steps_per_epoch=args.steps_per_epoch, n_scenes=args.n_scenes)
    res = run_trace_study(cfg, DEFAULT_ALPHAS)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_csv(out / "trace_instability.csv",
                     ["style", "tap", "trace", "instability"],
                     [(r["style"], r["tap"], r["trace"], r["instability"])
                      for r in res["rows"]])
    fileio.write_csv(out / "spearman.csv", ["tap", "rho"],
                     [(tap, "degenerate" if rho is None else rho)
                      for tap, rho in res["correlations"].items()])
    for tap, rho in res["correlations"].items():
        print(f"tap {tap}: Spearman rho = {rho}")


if __name__ == "__main__":
    main()

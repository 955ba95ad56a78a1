#!/usr/bin/env python3
"""Compare the image-only checkpoint against the temporally finetuned model:
flicker on static scenes and matched-patch SSIM on moving scenes, per style.

Writes stability.csv under --out and saves both model checkpoints per style.
"""

import argparse
from pathlib import Path

from stylestab import checkpoint, fileio
from stylestab.study import StudyConfig, run_stability_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-styles", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--steps-per-epoch", type=int, default=40)
    args = ap.parse_args()

    cfg = StudyConfig(seed=args.seed, image_epochs=args.epochs,
                      video_epochs=args.epochs, steps_per_epoch=args.steps_per_epoch)
    res = run_stability_comparison(cfg, n_styles=args.n_styles)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in res["results"]:
        checkpoint.save_model(out / f"style{r['style']}_image.gslw", r["image_model"])
        checkpoint.save_model(out / f"style{r['style']}_finetuned.gslw",
                              r["finetuned_model"])
        rows.append((r["style"], r["instability_image_only"],
                     r["instability_finetuned"], r["patch_ssim_image_only"],
                     r["patch_ssim_finetuned"]))
        drop = 1.0 - r["instability_finetuned"] / r["instability_image_only"]
        print(f"style {r['style']}: instability {r['instability_image_only']:.5f}"
              f" -> {r['instability_finetuned']:.5f} ({100 * drop:.0f}% drop), "
              f"patch SSIM {r['patch_ssim_image_only']:.3f}"
              f" -> {r['patch_ssim_finetuned']:.3f}")
    fileio.write_csv(out / "stability.csv",
                     ["style", "instability_image_only", "instability_finetuned",
                      "patch_ssim_image_only", "patch_ssim_finetuned"], rows)


if __name__ == "__main__":
    main()

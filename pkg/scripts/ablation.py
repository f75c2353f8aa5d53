"""Normalization-plan ablation: every plan, same data and budget, several seeds.

    python scripts/ablation.py --out runs/ablation [--seeds 0,1,2] [--epochs 20]
"""

import argparse
import csv
import logging
from pathlib import Path

from rainkit.experiments import ORDERING_PLANS, desk_config, desk_run, ordering_checks


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--plans", default=",".join(ORDERING_PLANS))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for seed in (int(s) for s in args.seeds.split(",")):
        for plan in args.plans.split(","):
            cfg = desk_config(plan, seed)
            if args.epochs:
                cfg.train.epochs = args.epochs
            run = desk_run(cfg, out / f"{plan}_seed{seed}")
            results[(plan, seed)] = run.result.history
            print(f"{plan:<14} seed {seed}  val_psnr {run.result.history[-1]['val_psnr']:.3f}  "
                  f"fmse {run.harmonized.mean('fmse'):.1f}", flush=True)

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("plan", "seed", "final_val_psnr"))
        for (plan, seed), hist in results.items():
            w.writerow((plan, seed, f"{hist[-1]['val_psnr']:.6f}"))
    if set(ORDERING_PLANS) <= set(args.plans.split(",")):
        for check in ordering_checks(results):
            gaps = "  ".join(f"{k}: {v:+.3f}" for k, v in check.gaps().items())
            print(f"seed {check.seed}: {'holds' if check.holds() else 'fails'}  {gaps}")


if __name__ == "__main__":
    main()

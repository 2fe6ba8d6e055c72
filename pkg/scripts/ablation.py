"""Ablation sweep: H=1 kernel PSNR of each variant against the full method.

    python scripts/ablation.py --seeds 0 1 2 --out ablation.csv
"""

import argparse
import csv

from psflearn.experiments import ABLATIONS, ablation_row, roundtrip_config
from psflearn.pipeline import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--variants", nargs="+", default=list(ABLATIONS), choices=list(ABLATIONS))
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        cap = simulate(roundtrip_config(seed))
        for name in args.variants:
            row = ablation_row(cap, name, seed, iters_per_band=args.iters)
            rows.append(row)
            print(row, flush=True)

    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for seed in args.seeds:
        full = next(r["psnr_H1"] for r in rows if r["seed"] == seed and r["variant"] == "full")
        for r in rows:
            if r["seed"] == seed and r["variant"] != "full":
                print(f"seed {seed} {r['variant']:<14s} H=1 {r['psnr_H1']:6.2f} vs full {full:6.2f} "
                      f"{'lower' if r['psnr_H1'] < full else 'NOT lower'}")


if __name__ == "__main__":
    main()

"""Round trip: simulate a lens, calibrate it from chart captures, score the kernels.

    python scripts/roundtrip.py --seed 0 --noise 0.01
"""

import argparse

from psflearn.experiments import run_roundtrip


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.0, help="per-frame noise sigma, full scale 1")
    ap.add_argument("--iters", type=int, default=300)
    args = ap.parse_args()

    rt = run_roundtrip(args.seed, noise_sigma=args.noise, iters_per_band=args.iters)
    rows = rt.scores()
    print(f"capture {rt.seconds['capture']:.0f} s, calibrate {rt.seconds['calibrate']:.0f} s")
    print("   H  channel  PSNR min  PSNR mean  SSIM min")
    for H in sorted({r["H"] for r in rows}):
        for ch in "RGB":
            sel = [r for r in rows if r["H"] == H and r["channel"] == ch]
            p = [r["psnr"] for r in sel]
            print(f"{H:4.2f}  {ch:>7s}  {min(p):8.2f}  {sum(p) / len(p):9.2f}  {min(r['ssim'] for r in sel):8.4f}")
    for w in rt.reports[0].warnings + rt.reports[1].warnings:
        print("warning:", w)


if __name__ == "__main__":
    main()

"""Single-band fit on a target whose 0 and 90 degree SFRs differ, both bases.

    python scripts/toy_conflict.py --seeds 0 1 2 3 4
"""

import argparse
import time

from psflearn.experiments import toy_conflict


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--iters", type=int, default=300)
    args = ap.parse_args()

    t0 = time.perf_counter()
    print("seed  anisotropy   set-Q loss   Seidel loss   ratio")
    for seed in args.seeds:
        r = toy_conflict(seed, args.iters)
        print(f"{seed:4d}  {r['anisotropy']:10.4f}  {r['proposed']:11.5f}  {r['seidel']:12.5f}  {r['ratio']:6.3f}")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()

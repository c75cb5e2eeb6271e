"""Detection rates of each rule-based detector on injected patterns and on plain random walks.

    python3 scripts/detector_rates.py --seeds 10
"""

import argparse

import numpy as np

from chartpat.patterns import PatternKind, scan_series
from chartpat.synthgen import inject_many, random_walk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--injections", type=int, default=100)
    ap.add_argument("--seeds", type=int, default=10, help="random walks used for the false detection rate")
    ap.add_argument("--bars", type=int, default=10_029, help="bars per walk (10k windows of 30)")
    args = ap.parse_args()

    for kind in PatternKind:
        s = random_walk(args.injections * 121, seed=5)
        s, recs = inject_many(s, kind, args.injections, seed=6)
        spans = [m.span for m in scan_series(s, kind)]
        hit = sum(any(lo < r.stop and r.start <= hi for lo, hi in spans) for r in recs)
        counts = [len(scan_series(random_walk(args.bars, seed=100 + k), kind)) for k in range(args.seeds)]
        windows = args.bars - 29
        print(f"{kind.value:<14} injected recall {hit}/{len(recs)}   "
              f"random-walk detections per 10k windows {np.mean(counts) * 10_000 / windows:.1f}", flush=True)


if __name__ == "__main__":
    main()

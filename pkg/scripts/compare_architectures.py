"""Train the three classifiers on one synthetic flag dataset and print the results table.

    python3 scripts/compare_architectures.py --seeds 0 1 2 --epochs 50
"""

import argparse
import json

import numpy as np

from chartpat.dataset import balance, build_labeled, split
from chartpat.evaluation import ReportEntry, report
from chartpat.models import TrainConfig, build_cnn1d, build_cnn2d, build_lstm, train
from chartpat.patterns import PatternKind
from chartpat.synthgen import inject_many, random_walk

BUILDERS = {
    "LSTM": (lambda seed: build_lstm(1, 10, seed=seed), 1e-2),
    "2D CNN": (lambda seed: build_cnn2d(64, 64, {"style": "line", "channel": "H"}, seed=seed), 1e-3),
    "2D CNN candlestick": (lambda seed: build_cnn2d(96, 64, {"style": "candlestick"}, seed=seed), 1e-3),
    "1D CNN": (lambda seed: build_cnn1d(4, 30, seed=seed), 1e-3),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bars", type=int, default=24_000)
    ap.add_argument("--injections", type=int, default=70)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--skip", nargs="*", default=[], help="model names to leave out")
    ap.add_argument("--json", help="also write per-seed recalls here")
    args = ap.parse_args()

    s = random_walk(args.bars, seed=1)
    s, _ = inject_many(s, PatternKind.BEARISH_FLAG, args.injections, seed=2)
    sp = split(balance(build_labeled(s, PatternKind.BEARISH_FLAG, window_len=30), seed=3), 0.2, seed=4)
    print(f"{len(sp.train)} train / {len(sp.validation)} validation samples")

    recalls = {}
    for name, (build, lr) in BUILDERS.items():
        if name in args.skip:
            continue
        for seed in args.seeds:
            rep = train(build(seed), sp, TrainConfig(epochs=args.epochs, lr=lr, seed=seed))
            recalls.setdefault(name, []).append(rep.best.recall)
            print(f"{name:<20} seed {seed}  recall {rep.best.recall:.3f}  fp_rate {rep.best.fp_rate:.4f}  "
                  f"best epoch {rep.best_epoch + 1}", flush=True)
    text, _ = report([ReportEntry(name, float(np.median(v)), None) for name, v in recalls.items()])
    print(text)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(recalls, f, indent=2)


if __name__ == "__main__":
    main()

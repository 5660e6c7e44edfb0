"""Multi-seed comparisons: image learning signal and pretraining hand-off speed-up."""
import argparse

import numpy as np

from realdiff.studies import handoff_speedup, learning_signal


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("study", choices=["learning-signal", "handoff"])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=40)
    args = ap.parse_args()
    if args.study == "learning-signal":
        r = learning_signal(seeds=range(args.seeds), n=args.n)
        label = "test RMSE (fusion vs structured)"
    else:
        r = handoff_speedup(seeds=range(args.seeds), n=args.n)
        label = "epochs to pretrain val loss (pretrained vs random)"
    print(label)
    for s, a, b in zip(r.seeds, r.a, r.b):
        print(f"seed {s}: {a:.4f}  {b:.4f}")
    print(f"medians {np.median(r.a):.4f}  {np.median(r.b):.4f}; a < b in {r.wins}/{len(r.seeds)}")


if __name__ == "__main__":
    main()

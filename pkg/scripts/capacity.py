"""Overfit each trunk x modality variant on a 4-patient cohort and report train RMSE."""
import argparse
import time

from realdiff.studies import CAPACITY_VARIANTS, capacity_rmse


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=1500)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for variant in CAPACITY_VARIANTS:
        start = time.perf_counter()
        rmse = capacity_rmse(variant, epochs=args.epochs, lr=args.lr, seed=args.seed)
        print(f"{variant:16s} rmse {rmse:.4f}  ({time.perf_counter() - start:.0f}s)")


if __name__ == "__main__":
    main()

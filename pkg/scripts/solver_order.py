"""Print the measured RK4 convergence order and constant-field error per seed."""
import argparse

from realdiff.paths import SCHEMES
from realdiff.solver_study import convergence_order, linear_field_error


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    for s in range(args.seeds):
        lin = max(linear_field_error(s, scheme) for scheme in SCHEMES)
        print(f"seed {s}: order {convergence_order(s):.3f}  constant-field error {lin:.1e}")


if __name__ == "__main__":
    main()

"""Finite-difference gradient check over several rig seeds."""

import argparse
import sys

from eegemo.gradcheck import run_gradcheck


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    worst = 0.0
    for seed in range(args.seeds):
        rep = run_gradcheck(seed)
        worst = max(worst, rep.max_error)
        print(f"seed {seed}: max rel err {rep.max_error:.3e} ({'pass' if rep.passed else 'FAIL'})")
    print(f"worst {worst:.3e}")
    sys.exit(0 if worst <= 1e-4 else 3)


if __name__ == "__main__":
    main()

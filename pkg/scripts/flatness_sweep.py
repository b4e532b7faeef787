"""Observed flatness failure rate against the concentration bound over a grid of c."""

import argparse

from prulab.flatness import check_flattening, hoeffding_failure_bound
import numpy as np

from prulab.qcore import random_state
from prulab.sampling import SeededStream


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--s", type=int, default=4)
    ap.add_argument("--cs", default="2,3,4,6,8")
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    # basis states flatten exactly, so random inputs are the informative case
    g = np.random.default_rng(args.seed)
    states = [random_state(args.n, g) for _ in range(args.s)]
    print(f"{'c':>5} {'observed':>10} {'bound':>12} {'max eps * 2^n':>14}")
    for c in (float(x) for x in args.cs.split(",")):
        rep = check_flattening(states, c=c, trials=args.trials, rng=SeededStream(args.seed))
        bound = hoeffding_failure_bound(args.n, args.s, c)
        print(f"{c:>5.1f} {rep.failure_rate:>10.4f} {bound:>12.3e} {rep.measured.max() * 2**args.n:>14.2f}")


if __name__ == "__main__":
    main()

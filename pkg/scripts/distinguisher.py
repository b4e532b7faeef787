"""Keyed vs table-random histogram experiment; prints the statistics and the replay digest."""

import argparse
import json

from prulab.verify import distinguisher_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--s", type=int, default=4)
    ap.add_argument("--t", type=int, default=1)
    ap.add_argument("--shots", type=int, default=100_000)
    ap.add_argument("--mode", choices=["keyed", "random"], default="keyed")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = distinguisher_experiment(n=args.n, s=args.s, t=args.t, shots=args.shots, mode=args.mode, seed=args.seed)
    print(json.dumps(res.to_row(timing=False)["measured"], indent=2, sort_keys=True))
    print(res.line())


if __name__ == "__main__":
    main()

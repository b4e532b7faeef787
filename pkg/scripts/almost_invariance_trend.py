"""Defect of rho_uni under the exact twirl, and TD of the averaged output to rho_uni, as N grows."""

import argparse

from prulab.haartwirl import TwirlContext, almost_invariance_defect
from prulab.qcore import trace_distance
from prulab.targets import build_rho_uni, exact_average_output
from prulab.verify import make_family


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ns", default="2,3,4,5")
    ap.add_argument("--s", type=int, default=2)
    ap.add_argument("--t", type=int, default=1)
    args = ap.parse_args()
    s, t = args.s, args.t
    q = s * t
    print(f"{'n':>3} {'N':>5} {'defect':>10} {'C':>8} {'TD(rho, rho_uni)':>18}")
    for n in (int(x) for x in args.ns.split(",")):
        N = 1 << n
        cap = max(4096, N**q)
        rho_uni = build_rho_uni(n, s, t, dense=True, cap=cap)
        defect = almost_invariance_defect(rho_uni, TwirlContext(q, N, cap=cap)) if N >= q else float("nan")
        rho = exact_average_output(make_family("fourier", n, s).states(), t, "orbit", cap=cap).rho
        td = trace_distance(rho, rho_uni, cap=cap)
        print(f"{n:>3} {N:>5} {defect:>10.5f} {defect * N / q**2:>8.4f} {td:>18.5f}")


if __name__ == "__main__":
    main()

"""Empirical monotonicity constant as a function of truncation degree and Sobolev index."""

import argparse

from distflow.hermite import TruncationScheme
from distflow.monotonicity import estimate_constant


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--ps", type=float, nargs="+", default=[-1.0, 0.0, 0.5, 1.0, 2.0])
    args = ap.parse_args()
    print("p,N,C_hat")
    for p in args.ps:
        rep = estimate_constant(args.alpha, p, args.d, args.samples, TruncationScheme(args.d, args.N))
        for n, c in rep.saturation_curve:
            print(f"{p},{n},{c:.10g}")


if __name__ == "__main__":
    main()

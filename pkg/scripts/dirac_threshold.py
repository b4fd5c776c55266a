"""Partial sums of ||delta_0||^2_{-q} and the slope classification around q = d/4."""

import argparse

import numpy as np

from distflow.sobolev import classify_dirac_growth, dirac_cauchy_degree, dirac_partial_sums


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--qs", type=float, nargs="+", default=[0.2, 0.24, 0.26, 0.3, 0.5])
    ap.add_argument("--d", type=int, default=1)
    args = ap.parse_args()
    for q in args.qs:
        c = classify_dirac_growth(q, args.d)
        ps = dirac_partial_sums(q, args.d, 100000)
        print(f"q={q}: slope {c['slope']:.4f} -> {c['verdict']}; S(1e3)={ps[1000]:.5f} S(1e5)={ps[-1]:.5f}", end="")
        if args.d == 1:
            print(f"; tail < 1e-3 from degree {dirac_cauchy_degree(q):.4g}")
        else:
            print()


if __name__ == "__main__":
    main()

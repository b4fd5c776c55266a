"""Explosion time of dX = X^2 dt from X_0 = 1 (exact answer 1) under Euler.

Prints the hitting time of each threshold for several dt against the exact
1 - 1/R, with the error in units of dt.  The lag grows like dt * log R.
"""

import argparse

import numpy as np

from distflow.distribution import Fields
from distflow.sde import sample_brownian, simulate_path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--thresholds", type=float, nargs="+", default=[10, 1e2, 1e3, 1e4, 1e6])
    ap.add_argument("--dts", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    args = ap.parse_args()
    f = Fields.from_functions(lambda x: 0 * x, lambda x: x**2)
    print("dt,threshold,hit,exact,error_in_dt")
    for dt in args.dts:
        bm = sample_brownian(1.5, dt, 1, 0, 1)
        res = simulate_path(f, [1.0], bm, args.thresholds)
        for R, hit in zip(args.thresholds, res.hitting_times[0]):
            exact = 1 - 1 / R
            print(f"{dt:g},{R:g},{hit:.6f},{exact:.6f},{(hit - exact) / dt:.2f}")
        eta = res.eta[0]
        print(f"# dt={dt:g}: eta={eta:.6f}, |eta-1|/dt={abs(eta - 1) / dt:.2f}, log(R_max)={np.log(args.thresholds[-1]):.2f}")


if __name__ == "__main__":
    main()

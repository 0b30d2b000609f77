"""Paired k-NN / constrained coverage over a k sweep on the range-skewed sphere.

    python scripts/coverage_sweep.py --seeds 20 --out sweep.csv
"""

import argparse
import csv
import sys
from collections import defaultdict

import numpy as np

from pcgeom.cli import BENCH_COLUMNS, bench_rows


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", nargs="+", type=int, default=[5, 10, 20, 40])
    ap.add_argument("--exponents", nargs="+", type=float, default=[0.0, 2.0, 4.0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    rows = list(bench_rows(["range-skewed-sphere"], args.k, [30.0], [1.25], args.exponents,
                           list(range(args.seeds)), args.n))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, BENCH_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)

    cov = defaultdict(list)
    for r in rows:
        cov[(r["density_exponent"], r["k"], r["mode"])].append(r["mean_coverage"])
    print(f"{'exp':>5} {'k':>4} {'knn':>8} {'constr':>8} {'diff':>8} {'wins':>6}")
    for e in args.exponents:
        for k in args.k:
            a = np.array(cov[(e, k, "knn")])
            b = np.array(cov[(e, k, "constrained")])
            print(f"{e:5.1f} {k:4d} {a.mean():8.4f} {b.mean():8.4f} {(b - a).mean():8.4f} "
                  f"{int(np.sum(b > a)):3d}/{len(a)}")


if __name__ == "__main__":
    sys.exit(main())

"""Wall-clock of index build, k-NN graph and constrained graph vs cloud size.

    python scripts/graph_timing.py --sizes 10000 100000 300000
"""

import argparse
import time

import numpy as np

from pcgeom.cloud import PointCloud
from pcgeom.graph import ConstraintParams, build_constrained_graph, build_knn_graph
from pcgeom.kdtree import build_index


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", nargs="+", type=int, default=[10_000, 100_000])
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    warm = PointCloud(np.random.default_rng(0).random((100, 3)))
    build_constrained_graph(warm, build_index(warm), 4)
    build_knn_graph(warm, build_index(warm), 4)

    params = ConstraintParams(np.pi / 6, 1.25, args.m)
    print(f"{'N':>8} {'index':>8} {'knn':>8} {'constr':>8} {'top-ups':>8}")
    for n in args.sizes:
        cloud = PointCloud(np.random.default_rng(args.seed).random((n, 3)))
        index, t_idx = timed(build_index, cloud)
        _, t_knn = timed(build_knn_graph, cloud, index, args.k)
        g, t_con = timed(build_constrained_graph, cloud, index, args.k, params)
        topups = int((g.degree - g.n_greedy).sum())
        print(f"{n:8d} {t_idx:8.2f} {t_knn:8.2f} {t_con:8.2f} {topups:8d}")


if __name__ == "__main__":
    main()

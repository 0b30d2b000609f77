import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def brute_d2(points, q):
    """Squared distances with the same per-axis arithmetic as the tree."""
    p = np.asarray(points, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    dx = p[:, 0] - q[0]
    dy = p[:, 1] - q[1]
    dz = p[:, 2] - q[2]
    return dx * dx + dy * dy + dz * dz


def brute_knn(points, q, k, exclude_index=-1, exclude_zero=False):
    d2 = brute_d2(points, q)
    idx = np.arange(len(d2))
    keep = idx != exclude_index
    if exclude_zero:
        keep &= d2 != 0.0
    idx, d2 = idx[keep], d2[keep]
    order = np.lexsort((idx, d2))[:k]
    return idx[order], np.sqrt(d2[order])


def brute_radius(points, q, radius):
    d2 = brute_d2(points, q)
    idx = np.flatnonzero(np.sqrt(d2) <= radius)
    order = np.lexsort((idx, d2[idx]))
    return idx[order], np.sqrt(d2[idx][order])


def excluded_by(x, y, z, theta, lam):
    """Exclusion predicate evaluated from scratch: z lies within angle theta
    of the ray x->y and closer to x than lam * |y - x|."""
    a = np.asarray(z, float) - np.asarray(x, float)
    b = np.asarray(y, float) - np.asarray(x, float)
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    cos = max(-1.0, min(1.0, float(a @ b) / (na * nb)))
    return math.acos(cos) < theta and na < lam * nb


def oracle_constrained(points, k, theta, lam, m=4):
    """Straight-line replay of the greedy construction, one vertex at a time."""
    points = np.asarray(points, float)
    n = len(points)
    rows = []
    for i in range(n):
        pool, dist = brute_knn(points, points[i], m * k, exclude_index=i)
        chosen = []
        for t, d in zip(pool.tolist(), dist.tolist()):
            if len(chosen) == k:
                break
            if d == 0.0:
                continue
            if any(excluded_by(points[i], points[y], points[t], theta, lam) for y in chosen):
                continue
            chosen.append(t)
        n_greedy = len(chosen)
        for t in pool.tolist():
            if len(chosen) == k:
                break
            if t not in chosen:
                chosen.append(t)
        rows.append((chosen, n_greedy))
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

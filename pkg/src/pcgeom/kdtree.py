"""Exact kd-tree over 3D points.

Nodes split at the median of their widest axis; leaves hold at most
``leaf_size`` points.  Queries return neighbors ordered by ascending distance,
ties broken by ascending point index, and agree exactly with a brute-force
scan that computes squared distances as ``dx*dx + dy*dy + dz*dz``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .cloud import PointCloud

LEAF_SIZE = 32
_STACK = 256


def _build(points: np.ndarray, leaf_size: int):
    n = points.shape[0]
    perm = np.arange(n, dtype=np.int64)
    start, end, left, right, bbmin, bbmax = [], [], [], [], [], []

    def new_node(s, e):
        sub = points[perm[s:e]]
        start.append(s)
        end.append(e)
        left.append(-1)
        right.append(-1)
        bbmin.append(sub.min(axis=0))
        bbmax.append(sub.max(axis=0))
        return len(start) - 1

    stack = [new_node(0, n)]
    while stack:
        node = stack.pop()
        s, e = start[node], end[node]
        if e - s <= leaf_size:
            continue
        extent = bbmax[node] - bbmin[node]
        axis = int(np.argmax(extent))
        idx = perm[s:e]
        if extent[axis] > 0.0:
            order = np.argsort(points[idx, axis], kind="stable")
        else:
            # all coincident: split by index order
            order = np.argsort(idx, kind="stable")
        perm[s:e] = idx[order]
        mid = (s + e) // 2
        lo, hi = new_node(s, mid), new_node(mid, e)
        left[node], right[node] = lo, hi
        stack.extend((hi, lo))

    return (
        perm,
        np.array(start, dtype=np.int64),
        np.array(end, dtype=np.int64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(bbmin, dtype=np.float64),
        np.array(bbmax, dtype=np.float64),
    )


@njit(cache=True, inline="always")
def _axis_gap(lo, hi, q):
    if q < lo:
        return lo - q
    if q > hi:
        return q - hi
    return 0.0


@njit(cache=True, inline="always")
def _box_d2(bbmin, bbmax, node, q0, q1, q2):
    # same subtraction as the point distance, so box_d2 <= d2 of any member
    g0 = _axis_gap(bbmin[node, 0], bbmax[node, 0], q0)
    g1 = _axis_gap(bbmin[node, 1], bbmax[node, 1], q1)
    g2 = _axis_gap(bbmin[node, 2], bbmax[node, 2], q2)
    return g0 * g0 + g1 * g1 + g2 * g2


@njit(cache=True, inline="always")
def _worse(d2a, ia, d2b, ib):
    return d2a > d2b or (d2a == d2b and ia > ib)


@njit(cache=True)
def _sift_down(hd, hi, count, pos):
    while True:
        child = 2 * pos + 1
        if child >= count:
            return
        if child + 1 < count and _worse(hd[child + 1], hi[child + 1], hd[child], hi[child]):
            child += 1
        if _worse(hd[child], hi[child], hd[pos], hi[pos]):
            hd[pos], hd[child] = hd[child], hd[pos]
            hi[pos], hi[child] = hi[child], hi[pos]
            pos = child
        else:
            return


@njit(cache=True)
def _knn_query(tp, perm, start, end, left, right, bbmin, bbmax,
               q0, q1, q2, k, exclude_index, exclude_zero, out_i, out_d2):
    """Fill out_i / out_d2 (length >= k) sorted; return the result count."""
    hd = out_d2
    hi = out_i
    count = 0
    stack = np.empty(_STACK, dtype=np.int64)
    sd2 = np.empty(_STACK, dtype=np.float64)
    top = 0
    stack[0] = 0
    sd2[0] = _box_d2(bbmin, bbmax, 0, q0, q1, q2)
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        # boxes at exactly the current worst distance may still hold a
        # lower-index tie, so only strictly farther boxes are pruned
        if count == k and sd2[top] > hd[0]:
            continue
        if left[node] < 0:
            for j in range(start[node], end[node]):
                dx = tp[j, 0] - q0
                dy = tp[j, 1] - q1
                dz = tp[j, 2] - q2
                d2 = dx * dx + dy * dy + dz * dz
                idx = perm[j]
                if idx == exclude_index or (exclude_zero and d2 == 0.0):
                    continue
                if count < k:
                    # sift up
                    pos = count
                    hd[pos] = d2
                    hi[pos] = idx
                    count += 1
                    while pos > 0:
                        parent = (pos - 1) // 2
                        if _worse(hd[pos], hi[pos], hd[parent], hi[parent]):
                            hd[pos], hd[parent] = hd[parent], hd[pos]
                            hi[pos], hi[parent] = hi[parent], hi[pos]
                            pos = parent
                        else:
                            break
                elif _worse(hd[0], hi[0], d2, idx):
                    hd[0] = d2
                    hi[0] = idx
                    _sift_down(hd, hi, count, 0)
        else:
            a = left[node]
            b = right[node]
            da = _box_d2(bbmin, bbmax, a, q0, q1, q2)
            db = _box_d2(bbmin, bbmax, b, q0, q1, q2)
            if da > db:
                a, b = b, a
                da, db = db, da
            # push farther first so the nearer child is visited next
            if not (count == k and db > hd[0]):
                stack[top] = b
                sd2[top] = db
                top += 1
            if not (count == k and da > hd[0]):
                stack[top] = a
                sd2[top] = da
                top += 1
    # heap-sort in place: repeatedly move the worst to the back
    n = count
    while n > 1:
        n -= 1
        hd[0], hd[n] = hd[n], hd[0]
        hi[0], hi[n] = hi[n], hi[0]
        _sift_down(hd, hi, n, 0)
    return count


@njit(cache=True)
def _knn_batch(tp, perm, start, end, left, right, bbmin, bbmax,
               queries, k, exclude, out_i, out_d2):
    for r in range(queries.shape[0]):
        c = _knn_query(tp, perm, start, end, left, right, bbmin, bbmax,
                       queries[r, 0], queries[r, 1], queries[r, 2],
                       k, exclude[r], False, out_i[r], out_d2[r])
        for j in range(c, k):
            out_i[r, j] = -1
            out_d2[r, j] = np.inf


@njit(cache=True)
def _radius_query(tp, perm, start, end, left, right, bbmin, bbmax,
                  q0, q1, q2, radius, out_i, out_d2):
    count = 0
    stack = np.empty(_STACK, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if np.sqrt(_box_d2(bbmin, bbmax, node, q0, q1, q2)) > radius:
            continue
        if left[node] < 0:
            for j in range(start[node], end[node]):
                dx = tp[j, 0] - q0
                dy = tp[j, 1] - q1
                dz = tp[j, 2] - q2
                d2 = dx * dx + dy * dy + dz * dz
                if np.sqrt(d2) <= radius:
                    out_i[count] = perm[j]
                    out_d2[count] = d2
                    count += 1
        else:
            stack[top] = right[node]
            stack[top + 1] = left[node]
            top += 2
    return count


class KDTree:
    """Immutable exact kd-tree over the points of a :class:`PointCloud`."""

    def __init__(self, cloud: PointCloud, leaf_size: int = LEAF_SIZE):
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.cloud = cloud
        pts = np.ascontiguousarray(cloud.points, dtype=np.float64)
        perm, start, end, left, right, bbmin, bbmax = _build(pts, leaf_size)
        self._arrays = (np.ascontiguousarray(pts[perm]), perm, start, end, left, right, bbmin, bbmax)
        for a in self._arrays:
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.cloud)

    @property
    def n_nodes(self) -> int:
        return self._arrays[2].shape[0]

    def knn(self, query, k: int, exclude_self: bool = False):
        """Return ``(indices, distances)`` of the ``min(k, available)`` nearest
        points.  With ``exclude_self``, indexed points coinciding with the
        query (distance 0) are skipped."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        k_eff = min(k, len(self))
        out_i = np.empty(k_eff, dtype=np.int64)
        out_d2 = np.empty(k_eff, dtype=np.float64)
        c = _knn_query(*self._arrays, q[0], q[1], q[2], k_eff, -1, exclude_self, out_i, out_d2)
        return out_i[:c], np.sqrt(out_d2[:c])

    def knn_batch(self, queries, k: int, exclude=None):
        """Vectorized k-NN.  ``exclude`` optionally gives, per query row, one
        point index to leave out (-1 for none); rows are padded with index -1
        and distance inf when fewer than ``k`` points qualify."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        if exclude is None:
            exclude = np.full(q.shape[0], -1, dtype=np.int64)
        exclude = np.ascontiguousarray(exclude, dtype=np.int64)
        k_eff = min(k, len(self))
        out_i = np.empty((q.shape[0], k_eff), dtype=np.int64)
        out_d2 = np.empty((q.shape[0], k_eff), dtype=np.float64)
        _knn_batch(*self._arrays, q, k_eff, exclude, out_i, out_d2)
        return out_i, np.sqrt(out_d2)

    def knn_self(self, k: int):
        """k nearest neighbors of every indexed point, excluding the point
        itself by index (coincident duplicates are still returned)."""
        return self.knn_batch(self.cloud.points, k, np.arange(len(self), dtype=np.int64))

    def radius_query(self, query, radius: float):
        """All points within ``radius`` (inclusive), sorted by distance then index."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        out_i = np.empty(len(self), dtype=np.int64)
        out_d2 = np.empty(len(self), dtype=np.float64)
        c = _radius_query(*self._arrays, q[0], q[1], q[2], float(radius), out_i, out_d2)
        idx, d2 = out_i[:c], out_d2[:c]
        order = np.lexsort((idx, d2))
        return idx[order], np.sqrt(d2[order])


def build_index(cloud: PointCloud, leaf_size: int = LEAF_SIZE) -> KDTree:
    return KDTree(cloud, leaf_size)

"""Directed neighborhood graphs over a point cloud.

Two constructions are provided: plain k-NN, and a greedy geometrically
constrained variant.  For the latter, each vertex x scans its nearest
candidates in ascending distance; once y is selected, any later candidate z
with ``angle(z - x, y - x) < theta`` and ``|z - x| < lam * |y - x|`` is
skipped.  This spreads the out-edges of x over more directions when the
sampling around x is locally dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

from .cloud import PointCloud
from .kdtree import KDTree

HIST_BINS = 16


@dataclass(frozen=True)
class ConstraintParams:
    theta: float = math.pi / 6
    lam: float = 1.25
    candidate_multiplier: int = 4

    def __post_init__(self):
        # theta = 0 is accepted as the empty-exclusion limit (equals k-NN)
        if not 0.0 <= self.theta < math.pi:
            raise ValueError("theta must lie in [0, pi)")
        if not self.lam >= 1.0:
            raise ValueError("lambda must be >= 1")
        if self.candidate_multiplier < 1:
            raise ValueError("candidate_multiplier must be a positive integer")


@dataclass(frozen=True)
class NeighborGraph:
    """Directed graph as a padded ``(N, k)`` target table.

    Row ``i`` lists the out-neighbors of vertex ``i`` in selection order;
    unused slots hold -1.  ``n_greedy[i]`` counts how many leading edges came
    from the constrained scan (the rest are shortfall top-ups); in k-NN mode
    it equals the degree.
    """

    targets: np.ndarray
    degree: np.ndarray
    k_target: int
    mode: str
    params: Optional[ConstraintParams] = None
    n_greedy: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_greedy is None:
            object.__setattr__(self, "n_greedy", self.degree.copy())
        for a in (self.targets, self.degree, self.n_greedy):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.targets.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.degree.sum())

    def out(self, i: int) -> np.ndarray:
        return self.targets[i, : self.degree[i]]

    def edges(self):
        """``(src, dst, rank)`` arrays over all edges, grouped by source."""
        k = self.targets.shape[1]
        mask = np.arange(k)[None, :] < self.degree[:, None]
        src = np.broadcast_to(np.arange(self.n_vertices)[:, None], mask.shape)[mask]
        rank = np.broadcast_to(np.arange(k)[None, :], mask.shape)[mask]
        return src, self.targets[mask], rank


def build_knn_graph(cloud: PointCloud, index: KDTree, k: int) -> NeighborGraph:
    """Edges from every point to its k nearest other points, nearest first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(cloud) < 2:
        raise ValueError("graph construction needs at least 2 points")
    nbr, _ = index.knn_self(k)
    degree = (nbr >= 0).sum(axis=1).astype(np.int64)
    return NeighborGraph(np.ascontiguousarray(nbr), degree, k, "knn")


@njit(cache=True)
def _exclusion_hit(ux, uy, uz, dz, su, sd, count, theta):
    """True if a unit direction (ux,uy,uz) at distance dz lies in the
    exclusion region of any of the first ``count`` selections."""
    for s in range(count):
        c = ux * su[s, 0] + uy * su[s, 1] + uz * su[s, 2]
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        if np.arccos(c) < theta and dz < sd[s]:
            return True
    return False


@njit(cache=True)
def _constrained_select(pts, cand, k, theta, lam, out, degree, n_greedy):
    n, pool = cand.shape
    su = np.empty((k, 3))
    sd = np.empty(k)  # lam * |y - x| of each selection
    taken = np.zeros(pool, dtype=np.bool_)
    for i in range(n):
        x0 = pts[i, 0]
        x1 = pts[i, 1]
        x2 = pts[i, 2]
        count = 0
        taken[:] = False
        for j in range(pool):
            if count == k:
                break
            t = cand[i, j]
            if t < 0:
                break
            dx = pts[t, 0] - x0
            dy = pts[t, 1] - x1
            dz = pts[t, 2] - x2
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            if dist == 0.0:
                continue  # coincident with x: no direction
            ux = dx / dist
            uy = dy / dist
            uz = dz / dist
            if _exclusion_hit(ux, uy, uz, dist, su, sd, count, theta):
                continue
            su[count, 0] = ux
            su[count, 1] = uy
            su[count, 2] = uz
            sd[count] = lam * dist
            out[i, count] = t
            taken[j] = True
            count += 1
        n_greedy[i] = count
        # shortfall: top up with the nearest skipped candidates
        for j in range(pool):
            if count == k:
                break
            t = cand[i, j]
            if t < 0:
                break
            if not taken[j]:
                out[i, count] = t
                taken[j] = True
                count += 1
        degree[i] = count
        for j in range(count, k):
            out[i, j] = -1


def build_constrained_graph(cloud: PointCloud, index: KDTree, k: int,
                            params: ConstraintParams = ConstraintParams()) -> NeighborGraph:
    """Greedy geometrically constrained graph over the ``m*k`` nearest
    candidates of each vertex (``m = params.candidate_multiplier``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(cloud) < 2:
        raise ValueError("graph construction needs at least 2 points")
    cand, _ = index.knn_self(params.candidate_multiplier * k)
    n = len(cloud)
    out = np.empty((n, k), dtype=np.int64)
    degree = np.empty(n, dtype=np.int64)
    n_greedy = np.empty(n, dtype=np.int64)
    _constrained_select(np.ascontiguousarray(cloud.points), np.ascontiguousarray(cand),
                        k, float(params.theta), float(params.lam), out, degree, n_greedy)
    return NeighborGraph(out, degree, k, "constrained", params, n_greedy)


# ---------------------------------------------------------------------------
# metrics


def _unit_directions(cloud: PointCloud, graph: NeighborGraph):
    pts = cloud.points
    k = graph.targets.shape[1]
    mask = np.arange(k)[None, :] < graph.degree[:, None]
    safe = np.where(mask, graph.targets, np.arange(graph.n_vertices)[:, None])
    d = pts[safe] - pts[:, None, :]
    length = np.linalg.norm(d, axis=2)
    mask &= length > 0
    u = np.where(mask[..., None], d / np.where(length > 0, length, 1.0)[..., None], 0.0)
    return u, length, mask


def angular_coverages(cloud: PointCloud, graph: NeighborGraph) -> np.ndarray:
    """Per-vertex ``1 - |mean unit direction to out-neighbors|``; NaN where
    a vertex has no out-neighbor at nonzero distance."""
    u, _, mask = _unit_directions(cloud, graph)
    cnt = mask.sum(axis=1)
    mean = u.sum(axis=1) / np.maximum(cnt, 1)[:, None]
    cov = 1.0 - np.linalg.norm(mean, axis=1)
    return np.where(cnt > 0, np.clip(cov, 0.0, 1.0), np.nan)


def angular_coverage(cloud: PointCloud, graph: NeighborGraph, vertex: int) -> float:
    """Directional spread of one vertex's out-edges: 0 when all point the
    same way, 1 when their unit directions cancel.  Coincident neighbors
    carry no direction and are ignored."""
    nbrs = graph.out(vertex)
    if nbrs.size == 0:
        raise ValueError(f"vertex {vertex} is isolated")
    d = cloud.points[nbrs] - cloud.points[vertex]
    length = np.linalg.norm(d, axis=1)
    keep = length > 0
    if not keep.any():
        raise ValueError(f"vertex {vertex} has only coincident neighbors")
    mean = (d[keep] / length[keep, None]).mean(axis=0)
    return float(min(1.0, max(0.0, 1.0 - np.linalg.norm(mean))))


@dataclass(frozen=True)
class GraphStats:
    n_vertices: int
    n_edges: int
    min_degree: int
    mean_degree: float
    max_degree: int
    mean_coverage: float
    mean_edge_length: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray

    def as_row(self) -> dict:
        row = {
            "n_vertices": self.n_vertices,
            "n_edges": self.n_edges,
            "min_degree": self.min_degree,
            "mean_degree": self.mean_degree,
            "max_degree": self.max_degree,
            "mean_coverage": self.mean_coverage,
            "mean_edge_length": self.mean_edge_length,
        }
        for i, e in enumerate(self.hist_edges):
            row[f"bin_edge_{i:02d}"] = float(e)
        for i, c in enumerate(self.hist_counts):
            row[f"bin_count_{i:02d}"] = int(c)
        return row


def graph_stats(graph: NeighborGraph, cloud: PointCloud) -> GraphStats:
    """Degree, coverage and edge-length summary with a 16-bin log-spaced
    edge-length histogram (zero-length edges go to the first bin)."""
    _, length, _ = _unit_directions(cloud, graph)
    k = graph.targets.shape[1]
    edge_mask = np.arange(k)[None, :] < graph.degree[:, None]
    lengths = length[edge_mask]
    cov = angular_coverages(cloud, graph)
    positive = lengths[lengths > 0]
    if positive.size:
        lo, hi = positive.min(), positive.max()
        if hi == lo:
            hi = lo * (1.0 + 1e-9)
        bin_edges = np.geomspace(lo, hi, HIST_BINS + 1)
        counts, _ = np.histogram(np.clip(lengths, lo, hi), bins=bin_edges)
    else:
        bin_edges = np.zeros(HIST_BINS + 1)
        counts = np.zeros(HIST_BINS, dtype=np.int64)
        counts[0] = lengths.size
    return GraphStats(
        n_vertices=graph.n_vertices,
        n_edges=graph.n_edges,
        min_degree=int(graph.degree.min()),
        mean_degree=float(graph.degree.mean()),
        max_degree=int(graph.degree.max()),
        mean_coverage=float(np.nanmean(cov)) if np.any(~np.isnan(cov)) else float("nan"),
        mean_edge_length=float(lengths.mean()) if lengths.size else float("nan"),
        hist_edges=bin_edges,
        hist_counts=counts,
    )


# ---------------------------------------------------------------------------
# export


def _header(graph: NeighborGraph) -> list[str]:
    p = graph.params
    lines = [f"# mode {graph.mode}", f"# k {graph.k_target}"]
    if p is None:
        lines += ["# theta -", "# lambda -", "# m -"]
    else:
        lines += [f"# theta {p.theta:.17g}", f"# lambda {p.lam:.17g}",
                  f"# m {p.candidate_multiplier}"]
    return lines


def write_edge_list(path, graph: NeighborGraph) -> None:
    """One ``src dst rank`` line per edge after ``#`` header lines."""
    src, dst, rank = graph.edges()
    body = "\n".join(f"{s} {d} {r}" for s, d, r in zip(src.tolist(), dst.tolist(), rank.tolist()))
    Path(path).write_text("\n".join(_header(graph)) + "\n" + body + ("\n" if body else ""))


def read_edge_list(path):
    """Parse an edge list into ``(header dict, (E, 3) int array)``."""
    header, rows = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split(None, 1)
                if len(parts) == 2:
                    header[parts[0]] = parts[1]
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'src dst rank'")
            rows.append([int(f) for f in fields])
    return header, np.array(rows, dtype=np.int64).reshape(-1, 3)


def write_stats_csv(path, stats: GraphStats, extra: Optional[dict] = None) -> None:
    row = dict(extra or {})
    row.update(stats.as_row())
    vals = [f"{v:.9g}" if isinstance(v, float) else str(v) for v in row.values()]
    Path(path).write_text(",".join(row) + "\n" + ",".join(vals) + "\n")

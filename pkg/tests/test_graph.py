import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import brute_knn, excluded_by, oracle_constrained
from pcgeom.cloud import PointCloud, SamplingSpec, generate_cloud
from pcgeom.graph import (
    HIST_BINS,
    ConstraintParams,
    angular_coverage,
    angular_coverages,
    build_constrained_graph,
    build_knn_graph,
    graph_stats,
    read_edge_list,
    write_edge_list,
    write_stats_csv,
)
from pcgeom.kdtree import build_index

THETA, LAM = math.pi / 6, 1.25

small_cloud = arrays(np.float64, st.tuples(st.integers(2, 60), st.just(3)),
                     elements=st.floats(-1, 1, allow_nan=False, width=32))


def fig2_toy():
    """Labelled configuration mirroring the paper's step-2 toy example:
    point 1 at the origin; 2,3,4 crowd one direction, 5,6 another, and
    7..10 are spread out.  Row index = label - 1."""
    def at(deg_azimuth, deg_elev, r):
        az, el = math.radians(deg_azimuth), math.radians(deg_elev)
        return [r * math.cos(el) * math.cos(az), r * math.cos(el) * math.sin(az), r * math.sin(el)]
    return np.array([
        [0.0, 0.0, 0.0],       # 1
        at(0, 0, 1.00),        # 2
        at(5, 2, 1.05),        # 3
        at(-4, 3, 1.10),       # 4
        at(70, 0, 1.15),       # 5
        at(74, -3, 1.20),      # 6
        at(180, 10, 1.22),     # 7
        at(250, 20, 1.50),     # 8
        at(120, -60, 1.60),    # 9
        at(300, 50, 1.70),     # 10
    ])


def cluster_toy(seed=0):
    """Six points packed within 8 degrees of +x at distance ~1, plus five
    spread points farther out; vertex 0 is the origin."""
    rng = np.random.default_rng(seed)
    d = np.array([1.0, 0.0, 0.0]) + rng.uniform(-0.07, 0.07, (6, 3)) * [0, 1, 1]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cluster = d * np.linspace(1.0, 1.1, 6)[:, None]
    spread = np.array([[0, 1.6, 0], [0, -1.7, 0], [0, 0, 1.8], [0, 0, -1.9], [-2.0, 0, 0]])
    return np.vstack([[0.0, 0.0, 0.0], cluster, spread]), set(range(1, 7))


def test_params_validation():
    with pytest.raises(ValueError):
        ConstraintParams(theta=math.pi)
    with pytest.raises(ValueError):
        ConstraintParams(lam=0.9)
    with pytest.raises(ValueError):
        ConstraintParams(candidate_multiplier=0)


def test_knn_two_points():
    c = PointCloud([[0.0, 0, 0], [1.0, 0, 0]])
    g = build_knn_graph(c, build_index(c), 1)
    assert g.out(0).tolist() == [1] and g.out(1).tolist() == [0]
    assert graph_stats(g, c).mean_edge_length == 1.0


def test_knn_collinear():
    c = PointCloud([[float(x), 0, 0] for x in range(4)])
    g = build_knn_graph(c, build_index(c), 2)
    assert g.out(0).tolist() == [1, 2]


def test_knn_matches_brute_force():
    pts = np.random.default_rng(0).random((500, 3))
    c = PointCloud(pts)
    g = build_knn_graph(c, build_index(c), 20)
    for i in range(500):
        np.testing.assert_array_equal(g.out(i), brute_knn(pts, pts[i], 20, exclude_index=i)[0])
    assert np.all(g.degree == 20)


def test_knn_saturates_below_k():
    c = PointCloud(np.random.default_rng(1).random((5, 3)))
    g = build_knn_graph(c, build_index(c), 10)
    assert np.all(g.degree == 4)
    for i in range(5):
        assert i not in g.out(i)


def test_exclusion_predicate_example():
    x = np.zeros(3)
    y, z = np.array([1.0, 0, 0]), np.array([1.1, 0.05, 0])
    assert math.degrees(math.acos(z @ y / np.linalg.norm(z))) == pytest.approx(2.603, abs=1e-3)
    assert excluded_by(x, y, z, THETA, LAM)
    assert not excluded_by(x, y, [0.0, 1.0, 0.0], THETA, LAM)


def test_constrained_three_candidates():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1.1, 0.05, 0], [0, 1, 0]], float)
    c = PointCloud(pts)
    g = build_constrained_graph(c, build_index(c), 2, ConstraintParams(THETA, LAM))
    assert g.out(0).tolist() == [1, 3]
    assert g.n_greedy[0] == 2


def test_fig2_toy_selection():
    pts = fig2_toy()
    c = PointCloud(pts)
    idx = build_index(c)
    knn = build_knn_graph(c, idx, 6)
    assert [t + 1 for t in knn.out(0)] == [2, 3, 4, 5, 6, 7]
    g = build_constrained_graph(c, idx, 6, ConstraintParams(THETA, LAM))
    assert [t + 1 for t in g.out(0)] == [2, 5, 7, 8, 9, 10]
    assert oracle_constrained(pts, 6, THETA, LAM)[0][0] == g.out(0).tolist()


def test_cluster_toy_limits_crowded_cone():
    pts, cluster = cluster_toy()
    c = PointCloud(pts)
    g = build_constrained_graph(c, build_index(c), 6, ConstraintParams(THETA, LAM))
    chosen = g.out(0).tolist()
    assert chosen == oracle_constrained(pts, 6, THETA, LAM)[0][0]
    assert len(set(chosen) - cluster) >= 3
    assert g.n_greedy[0] == 6
    knn = build_knn_graph(c, build_index(c), 6)
    assert set(knn.out(0).tolist()) == cluster


@given(pts=small_cloud, k=st.integers(1, 8), m=st.integers(1, 4),
       theta=st.floats(0.0, 3.0), lam=st.floats(1.0, 3.0))
def test_constrained_matches_oracle(pts, k, m, theta, lam):
    c = PointCloud(pts)
    g = build_constrained_graph(c, build_index(c), k, ConstraintParams(theta, lam, m))
    for i, (chosen, n_greedy) in enumerate(oracle_constrained(pts, k, theta, lam, m)):
        assert g.out(i).tolist() == chosen
        assert g.n_greedy[i] == n_greedy


@given(pts=small_cloud, k=st.integers(1, 8), theta=st.floats(0.01, 3.0), lam=st.floats(1.0, 3.0))
def test_graph_invariants(pts, k, theta, lam):
    c = PointCloud(pts)
    idx = build_index(c)
    g = build_constrained_graph(c, idx, k, ConstraintParams(theta, lam))
    n = len(pts)
    assert np.all(g.degree == min(k, n - 1))
    for i in range(n):
        out = g.out(i).tolist()
        assert i not in out and len(set(out)) == len(out)
        greedy = out[: g.n_greedy[i]]
        # soundness: no later greedy pick sits in an earlier pick's region
        for a in range(len(greedy)):
            for b in range(a + 1, len(greedy)):
                assert not excluded_by(pts[i], pts[greedy[a]], pts[greedy[b]], theta, lam)
        # greedy prefix: first pick is the nearest non-coincident candidate
        pool, dist = brute_knn(pts, pts[i], 4 * k, exclude_index=i)
        nonzero = pool[dist > 0]
        if nonzero.size:
            assert greedy[0] == nonzero[0]


def _replay(x, chosen_before, theta, lam, candidate):
    return not any(excluded_by(x, y, candidate, theta, lam) for y in chosen_before)


@given(pts=small_cloud, t_small=st.floats(0.0, 1.5), dt=st.floats(0.0, 1.5),
       lam=st.floats(1.0, 3.0))
def test_predicate_monotone_in_theta(pts, t_small, dt, lam):
    # replay each vertex's scan under the small theta; at every position, a
    # candidate rejected there is also rejected under the larger theta given
    # the same prior selections
    t_big = t_small + dt
    for i in range(len(pts)):
        pool, dist = brute_knn(pts, pts[i], 16, exclude_index=i)
        chosen = []
        for t, d in zip(pool.tolist(), dist.tolist()):
            if d == 0.0:
                continue
            ok_small = _replay(pts[i], [pts[y] for y in chosen], t_small, lam, pts[t])
            ok_big = _replay(pts[i], [pts[y] for y in chosen], t_big, lam, pts[t])
            assert ok_small or not ok_big
            if ok_small:
                chosen.append(t)


def test_theta_zero_equals_knn():
    c = generate_cloud(SamplingSpec("two-cluster", 800, seed=3))
    idx = build_index(c)
    knn = build_knn_graph(c, idx, 12)
    g0 = build_constrained_graph(c, idx, 12, ConstraintParams(0.0, LAM))
    tiny = build_constrained_graph(c, idx, 12, ConstraintParams(1e-9, LAM))
    np.testing.assert_array_equal(g0.targets, knn.targets)
    np.testing.assert_array_equal(tiny.targets, knn.targets)


def test_shortfall_top_up():
    # every candidate sits behind the first one, so the scan keeps only it
    pts = np.array([[0, 0, 0]] + [[1.0 + 0.01 * i, 0, 0] for i in range(10)], float)
    c = PointCloud(pts)
    g = build_constrained_graph(c, build_index(c), 3, ConstraintParams(THETA, 2.0, 2))
    assert g.n_greedy[0] == 1
    assert g.out(0).tolist() == [1, 2, 3]
    assert g.degree[0] == 3


def test_duplicates_not_greedy_candidates():
    pts = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    c = PointCloud(pts)
    g = build_constrained_graph(c, build_index(c), 4, ConstraintParams(THETA, LAM))
    assert g.out(0).tolist() == [2, 3, 4, 1]
    assert g.n_greedy[0] == 3


def test_rigid_motion_equivariance(rng):
    pts = rng.random((600, 3))
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = pts @ (q * np.sign(np.diag(r))).T + [3.0, -1.0, 0.5]
    graphs = []
    for p in (pts, moved):
        c = PointCloud(p)
        idx = build_index(c)
        graphs.append((build_knn_graph(c, idx, 10).targets,
                       build_constrained_graph(c, idx, 10).targets))
    np.testing.assert_array_equal(graphs[0][0], graphs[1][0])
    np.testing.assert_array_equal(graphs[0][1], graphs[1][1])


def test_deterministic():
    c = generate_cloud(SamplingSpec("range-skewed-sphere", 2000, 2.0, seed=4))
    a = build_constrained_graph(c, build_index(c), 20)
    b = build_constrained_graph(c, build_index(c), 20)
    assert a.targets.tobytes() == b.targets.tobytes()


# --- coverage metric --------------------------------------------------------

def _star(dirs):
    pts = np.vstack([[0.0, 0.0, 0.0], dirs])
    c = PointCloud(pts)
    return c, build_knn_graph(c, build_index(c), len(dirs))


def test_coverage_aligned_is_zero():
    c, g = _star([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    assert angular_coverage(c, g, 0) == 0.0


def test_coverage_octahedron_is_one():
    c, g = _star(np.vstack([np.eye(3), -np.eye(3)]))
    assert angular_coverage(c, g, 0) == pytest.approx(1.0, abs=1e-15)


def test_coverage_cone():
    # 6 unit directions on the rim of a 30 degree cone: mean norm = cos 30
    az = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    s = math.sin(math.pi / 6)
    dirs = np.column_stack([np.full(6, math.cos(math.pi / 6)), s * np.cos(az), s * np.sin(az)])
    c, g = _star(dirs * np.arange(1, 7)[:, None])
    value = angular_coverage(c, g, 0)
    assert value == pytest.approx(1 - math.cos(math.pi / 6), abs=1e-12)
    assert value < 0.2


def test_coverage_vectorized_agrees(rng):
    c = PointCloud(rng.random((300, 3)))
    g = build_constrained_graph(c, build_index(c), 8)
    cov = angular_coverages(c, g)
    for i in range(0, 300, 17):
        assert cov[i] == pytest.approx(angular_coverage(c, g, i), abs=1e-12)


def test_coverage_isolated_vertex_errors():
    c = PointCloud([[0.0, 0, 0], [0.0, 0, 0]])
    g = build_knn_graph(c, build_index(c), 1)
    with pytest.raises(ValueError):
        angular_coverage(c, g, 0)


# --- stats and export -------------------------------------------------------

def test_stats_knn_degrees():
    c = generate_cloud(SamplingSpec("sphere", 400, seed=5))
    st_ = graph_stats(build_knn_graph(c, build_index(c), 7), c)
    assert st_.min_degree == st_.max_degree == 7 and st_.mean_degree == 7.0
    assert st_.n_edges == 2800
    assert st_.hist_counts.sum() == 2800 and st_.hist_counts.size == HIST_BINS
    assert np.all(np.diff(np.log(st_.hist_edges)) == pytest.approx(np.log(st_.hist_edges[1] / st_.hist_edges[0])))


def test_edge_list_round_trip(tmp_path):
    c = generate_cloud(SamplingSpec("sphere", 200, seed=6))
    g = build_constrained_graph(c, build_index(c), 5, ConstraintParams(THETA, LAM, 3))
    path = tmp_path / "g.txt"
    write_edge_list(path, g)
    header, edges = read_edge_list(path)
    assert header["mode"] == "constrained" and header["k"] == "5" and header["m"] == "3"
    assert float(header["theta"]) == THETA and float(header["lambda"]) == LAM
    assert edges.shape == (1000, 3)
    for s, d, r in edges[:50]:
        assert g.out(s)[r] == d


def test_stats_csv_single_row(tmp_path):
    c = generate_cloud(SamplingSpec("sphere", 200, seed=7))
    path = tmp_path / "s.csv"
    write_stats_csv(path, graph_stats(build_knn_graph(c, build_index(c), 5), c), {"mode": "knn"})
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",")[:2] == ["mode", "n_vertices"]
    assert len(lines[0].split(",")) == len(lines[1].split(","))

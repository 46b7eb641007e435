import itertools
import math

import numpy as np
import pytest

from latnav import planner
from latnav.errors import ConfigError, DisconnectedError, FormatError
from latnav.planner import FrameGraph, FunctionDecoder, IdentityDecoder, PlannerConfig


def wave_decoder():
    def f(z):
        return np.array([z[0], z[1], 5.0 * math.sin(z[0])])

    def jac(z):
        return np.array([[1.0, 0.0], [0.0, 1.0], [5.0 * math.cos(z[0]), 0.0]])

    return FunctionDecoder(f, jac)


def random_graph(rng, n, p=0.5):
    adj = [dict() for _ in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        if rng.uniform() < p:
            w = float(rng.integers(1, 10))
            adj[i][j] = adj[j][i] = w
    return FrameGraph(np.zeros((n, 1)), adj)


def brute_force(graph, s, t):
    best = math.inf

    def walk(u, seen, w):
        nonlocal best
        if w >= best:
            return
        if u == t:
            best = w
            return
        for v, c in graph.adjacency[u].items():
            if v not in seen:
                walk(v, seen | {v}, w + c)

    walk(s, {s}, 0.0)
    return best


class TestPathBasics:
    def test_straight_path(self):
        p = planner.init_straight_path([0.0, 0.0], [1.0, 2.0], 5)
        np.testing.assert_allclose(p.points[2], [0.5, 1.0])
        assert p.points[-1].tolist() == [1.0, 2.0]

    def test_straight_path_errors(self):
        with pytest.raises(ConfigError):
            planner.init_straight_path([0.0], [1.0, 2.0], 5)
        with pytest.raises(ConfigError):
            planner.init_straight_path([0.0], [1.0], 1)

    def test_path_length_oracle(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 5.0]])
        assert planner.path_length(pts, IdentityDecoder()) == pytest.approx(6.0)
        assert planner.path_length(pts, IdentityDecoder(), squared=True) == pytest.approx(26.0)

    def test_local_gradient_hand_value(self):
        g = planner.local_gradient(np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([2.0, 2.0]), IdentityDecoder())
        np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-15)
        g = planner.local_gradient(np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([2.0, 0.0]), IdentityDecoder())
        np.testing.assert_allclose(g, [0.0, math.sqrt(2.0)], atol=1e-15)

    def test_local_gradient_degenerate(self):
        z = np.array([1.0, 2.0])
        np.testing.assert_array_equal(planner.local_gradient(z, z, z, IdentityDecoder()), [0.0, 0.0])

    @pytest.mark.parametrize("squared", [False, True])
    def test_local_gradient_finite_differences(self, squared):
        dec = wave_decoder()
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(20):
            zp, z, zn = rng.normal(size=(3, 2))
            g = planner.local_gradient(zp, z, zn, dec, squared=squared)
            fd = np.array([
                (planner.local_objective(zp, z + h * e, zn, dec, squared)
                 - planner.local_objective(zp, z - h * e, zn, dec, squared)) / (2 * h)
                for e in np.eye(2)
            ])
            assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)) < 1e-4


class TestPlan:
    def test_identity_returns_straight_line(self):
        zs, zd = np.array([0.1, -2.0, 3.0, 0.5]), np.array([1.0, 1.0, -1.0, 2.0])
        path = planner.plan_geodesic(zs, zd, IdentityDecoder())
        straight = planner.init_straight_path(zs, zd, 50).points
        assert np.max(np.abs(path.points - straight)) < 1e-6
        assert abs(path.length_history[-1] - np.linalg.norm(zd - zs)) < 1e-6

    def test_equal_endpoints(self):
        z = np.array([0.3, 0.4])
        path = planner.plan_geodesic(z, z, wave_decoder(), PlannerConfig(points=10))
        assert np.all(path.points == z)
        assert path.length_history == [0.0]

    def test_wave_decoder_beats_random_search(self):
        dec = wave_decoder()
        zs, zd = np.array([0.0, 0.0]), np.array([2 * math.pi, 0.5])
        cfg = PlannerConfig(points=30, alpha=0.02, max_sweeps=500, tol=1e-7)
        path = planner.plan_geodesic(zs, zd, dec, cfg)
        assert path.monotone
        planned = planner.path_length(path, dec)
        straight = planner.path_length(planner.init_straight_path(zs, zd, 30), dec)
        assert planned < 0.9 * straight
        # seeded random local search over the interior points
        def length(pts):
            imgs = np.column_stack([pts[:, 0], pts[:, 1], 5.0 * np.sin(pts[:, 0])])
            return float(np.sum(np.linalg.norm(np.diff(imgs, axis=0), axis=1)))

        rng = np.random.default_rng(1)
        best_pts = planner.init_straight_path(zs, zd, 30).points
        best = straight
        for it in range(20000):
            cand = best_pts.copy()
            i = int(rng.integers(1, 29))
            cand[i] += rng.normal(size=2) * 0.05
            v = length(cand)
            if v < best:
                best, best_pts = v, cand
        assert planned <= 1.02 * best

    def test_monotone_history(self):
        path = planner.plan_geodesic(np.array([-1.0, 0.0]), np.array([2.0, 1.0]), wave_decoder(), PlannerConfig(points=20))
        h = path.length_history
        assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))

    def test_config_errors(self):
        for kw in ({"points": 1}, {"alpha": 0.0}, {"max_sweeps": 0}, {"tol": -1.0}):
            with pytest.raises(ConfigError):
                PlannerConfig(**kw)


class TestPathFile:
    def test_roundtrip(self, tmp_path):
        pts = np.random.default_rng(3).normal(size=(7, 3))
        planner.save_path(planner.LatentPath(pts), tmp_path / "p.txt")
        assert np.array_equal(planner.load_path(tmp_path / "p.txt").points, pts)

    def test_bad_files(self):
        with pytest.raises(FormatError):
            planner.parse_path("0 1\n")
        with pytest.raises(FormatError):
            planner.parse_path("# latentpath v1 N=2 J=2\n0 1\n")


class TestGraph:
    def test_knn_matches_brute_force(self):
        pts = np.random.default_rng(4).normal(size=(30, 3))
        nn = planner.knn_indices(pts, 4)
        for i in range(30):
            d = [(float(np.sum((pts[i] - pts[j]) ** 2)), j) for j in range(30) if j != i]
            assert nn[i].tolist() == [j for _, j in sorted(d)[:4]]

    def test_graph_symmetric_with_image_weights(self):
        lat = np.random.default_rng(5).normal(size=(10, 2))
        imgs = np.random.default_rng(6).uniform(size=(10, 4))
        g = planner.build_frame_graph(lat, imgs, 3)
        for i, nbrs in enumerate(g.adjacency):
            for j, w in nbrs.items():
                assert g.adjacency[j][i] == w
                assert w == pytest.approx(np.linalg.norm(imgs[i] - imgs[j]))

    def test_ring_neighbours(self):
        nn = planner.ring_knn_indices(np.arange(8) / 8, 2)
        assert sorted(nn[0].tolist()) == [1, 7]

    def test_triangle(self):
        adj = [{1: 1.0, 2: 10.0}, {0: 1.0, 2: 5.0}, {0: 10.0, 1: 5.0}]
        nodes, w = planner.oracle_shortest_path(FrameGraph(np.zeros((3, 1)), adj), 0, 2)
        assert nodes == [0, 1, 2] and w == 6.0

    def test_same_node(self):
        adj = [{1: 1.0}, {0: 1.0}]
        assert planner.oracle_shortest_path(FrameGraph(np.zeros((2, 1)), adj), 1, 1) == ([1], 0.0)

    def test_exhaustive_small_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            n = int(rng.integers(2, 9))
            g = random_graph(rng, n)
            s, t = (int(v) for v in rng.integers(0, n, 2))
            best = brute_force(g, s, t)
            if math.isinf(best):
                with pytest.raises(DisconnectedError):
                    planner.oracle_shortest_path(g, s, t)
                continue
            nodes, w = planner.oracle_shortest_path(g, s, t)
            assert w == pytest.approx(best)
            assert nodes[0] == s and nodes[-1] == t
            assert sum(g.weight(a, b) for a, b in zip(nodes, nodes[1:])) == pytest.approx(w)

    def test_disconnected_message(self):
        adj = [{1: 1.0}, {0: 1.0}, {3: 1.0}, {2: 1.0}]
        with pytest.raises(DisconnectedError, match="disconnected"):
            planner.oracle_shortest_path(FrameGraph(np.zeros((4, 1)), adj), 0, 3)

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            planner.build_frame_graph(np.zeros((3, 2)), np.zeros((3, 2)), 3)

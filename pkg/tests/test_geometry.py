import numpy as np
import pytest

from gridpose.geometry import (
    CameraIntrinsics,
    KeypointSet,
    ObjectModel,
    Pose,
    RoiTransform,
    build_knn_graph,
    farthest_point_sample,
    from_roi,
    object_diameter,
    project,
    to_roi,
)

from conftest import random_pose


def fps_oracle(verts: np.ndarray, n: int, seed: int) -> list[int]:
    """Brute-force greedy FPS: scan all vertices at every step."""
    chosen = [seed]
    while len(chosen) < n:
        best_i, best_d = None, -1.0
        for i in range(len(verts)):
            d = min(float(np.linalg.norm(verts[i] - verts[j])) for j in chosen)
            if d > best_d + 1e-15:
                best_i, best_d = i, d
        chosen.append(best_i)
    return chosen


def knn_oracle(pts: np.ndarray, k: int) -> list[list[int]]:
    """Exhaustive neighbor search with (distance, index) sorting."""
    n = len(pts)
    out = []
    for i in range(n):
        cand = sorted((float(np.linalg.norm(pts[i] - pts[j])), j)
                      for j in range(n) if j != i)
        out.append([j for _, j in cand[:min(k, n - 1)]])
    return out


class TestFarthestPointSample:
    def test_collinear(self):
        verts = np.stack([np.arange(11.0), np.zeros(11), np.zeros(11)], axis=1)
        ks = farthest_point_sample(ObjectModel(vertices=verts), 2, 0)
        assert sorted(ks.indices.tolist()) == [0, 10]

    def test_full_exhaustion(self):
        verts = np.random.default_rng(0).normal(size=(9, 3))
        model = ObjectModel(vertices=verts)
        ks = farthest_point_sample(model, 9, 2)
        assert sorted(ks.indices.tolist()) == list(range(9))
        ks2 = farthest_point_sample(model, 9, 2)
        assert np.array_equal(ks.indices, ks2.indices)

    def test_cube_corners(self):
        # Greedy from a corner always takes the opposite corner second
        # (unique max, sqrt(3)); every remaining corner then sits at
        # distance 1 from one of the two, so every greedy run ends with
        # min pairwise distance exactly 1 (verified by enumerating all
        # tie-break orders).
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                           dtype=float)
        ks = farthest_point_sample(ObjectModel(vertices=corners), 4, 0)
        assert ks.indices.tolist() == fps_oracle(corners, 4, 0)
        assert 7 in ks.indices  # the opposite corner (1,1,1)
        pts = ks.points
        dmin = min(np.linalg.norm(pts[i] - pts[j])
                   for i in range(4) for j in range(i + 1, 4))
        assert dmin == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_greedy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        verts = rng.normal(size=(40, 3))
        model = ObjectModel(vertices=verts)
        got = farthest_point_sample(model, 12, seed_index=seed % 40).indices.tolist()
        assert got == fps_oracle(verts, 12, seed % 40)

    def test_selected_points_are_vertices(self):
        rng = np.random.default_rng(3)
        verts = rng.normal(size=(30, 3))
        model = ObjectModel(vertices=verts)
        ks = farthest_point_sample(model, 10)
        assert np.array_equal(ks.points, verts[ks.indices])

    def test_min_distance_monotone(self):
        rng = np.random.default_rng(11)
        verts = rng.normal(size=(60, 3))
        ks = farthest_point_sample(ObjectModel(vertices=verts), 20, 0)
        gaps = []
        for i in range(1, 20):
            gaps.append(min(np.linalg.norm(ks.points[i] - ks.points[j])
                            for j in range(i)))
        assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))

    def test_bad_args(self):
        model = ObjectModel(vertices=np.eye(3))
        with pytest.raises(ValueError):
            farthest_point_sample(model, 4)
        with pytest.raises(ValueError):
            farthest_point_sample(model, 2, seed_index=7)


class TestKnnGraph:
    def test_three_points_line(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [3, 0, 0]])
        g = build_knn_graph(KeypointSet(pts, np.arange(3)), 1)
        assert set(map(tuple, g.edges())) == {(0, 1), (1, 0), (2, 1)}

    def test_saturated_k_gives_complete_graph(self):
        pts = np.random.default_rng(0).normal(size=(6, 3))
        g = build_knn_graph(KeypointSet(pts, np.arange(6)), 99)
        assert g.out_degree == 5
        edges = set(map(tuple, g.edges()))
        assert len(edges) == 30
        assert all(i != j for i, j in edges)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(20, 3))
        g = build_knn_graph(KeypointSet(pts, np.arange(20)), 4)
        assert g.neighbors.tolist() == knn_oracle(pts, 4)

    def test_bruteforce_sweep_sizes(self):
        for n in (2, 3, 17, 50, 200):
            pts = np.random.default_rng(n).normal(size=(n, 3))
            k = min(5, n - 1)
            g = build_knn_graph(KeypointSet(pts, np.arange(n)), k)
            assert g.neighbors.tolist() == knn_oracle(pts, k)
            assert g.out_degree == min(k, n - 1)

    def test_tie_breaks_lowest_index(self):
        # Nodes 1 and 2 are equidistant from node 0.
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [5, 0, 0]])
        g = build_knn_graph(KeypointSet(pts, np.arange(4)), 1)
        assert g.neighbors[0, 0] == 1

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            build_knn_graph(KeypointSet(np.zeros((1, 3)), np.zeros(1)), 1)


class TestProjection:
    def test_optical_axis(self, intr):
        iden = Pose.identity()
        intr2 = CameraIntrinsics(500, 500, 128, 128)
        uv, ok = project(np.array([[0.0, 0, 1]]), iden, intr2)
        assert ok.all()
        assert uv[0] == pytest.approx([128.0, 128.0])

    def test_offset_point(self):
        intr2 = CameraIntrinsics(500, 500, 128, 128)
        uv, _ = project(np.array([[0.1, 0, 1]]), Pose.identity(), intr2)
        assert uv[0] == pytest.approx([178.0, 128.0])

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_homogeneous_matrix_oracle(self, seed, intr):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        pts = rng.uniform(-0.2, 0.2, size=(15, 3))
        uv, ok = project(pts, pose, intr)
        assert ok.all()
        # 4x4 homogeneous pipeline oracle
        m = np.eye(4)
        m[:3, :3] = pose.rotation
        m[:3, 3] = pose.translation
        k = np.array([[intr.fx, 0, intr.cx], [0, intr.fy, intr.cy], [0, 0, 1.0]])
        ph = np.hstack([pts, np.ones((15, 1))])
        cam = (m @ ph.T).T[:, :3]
        pix = (k @ cam.T).T
        oracle = pix[:, :2] / pix[:, 2:3]
        assert np.abs(uv - oracle).max() < 1e-9

    def test_behind_camera_flagged(self, intr):
        uv, ok = project(np.array([[0.0, 0, -1], [0, 0, 1]]), Pose.identity(), intr)
        assert ok.tolist() == [False, True]


class TestRoi:
    def test_corners(self):
        t = RoiTransform((100, 50), (128, 128), 256)
        assert to_roi(np.array([[100.0, 50]]), t)[0] == pytest.approx([0.0, 0.0])
        assert to_roi(np.array([[228.0, 178]]), t)[0] == pytest.approx([256.0, 256.0])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = RoiTransform(tuple(rng.uniform(0, 300, 2)),
                             tuple(rng.uniform(10, 400, 2)),
                             256)
            pts = rng.uniform(-100, 700, size=(20, 2))
            back = from_roi(to_roi(pts, t), t)
            assert np.abs(back - pts).max() < 1e-9

    def test_invalid_bbox(self):
        with pytest.raises(ValueError):
            RoiTransform((0, 0), (0, 10), 256)


class TestDiameter:
    def test_unit_cube(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                           dtype=float)
        assert object_diameter(ObjectModel(vertices=corners)) == pytest.approx(np.sqrt(3.0))

    def test_two_points(self):
        m = ObjectModel(vertices=np.array([[0.0, 0, 0], [0, 0.3, 0]]))
        assert m.diameter == pytest.approx(0.3)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(4)
        verts = rng.normal(size=(50, 3))
        got = object_diameter(ObjectModel(vertices=verts))
        best = max(np.linalg.norm(verts[i] - verts[j])
                   for i in range(50) for j in range(i + 1, 50))
        assert got == pytest.approx(best, rel=1e-12)

    def test_single_vertex_warns(self):
        with pytest.warns(UserWarning):
            ObjectModel(vertices=np.zeros((1, 3)))


class TestPoseValidation:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_camera_center_round_trip(self):
        rng = np.random.default_rng(9)
        pose = random_pose(rng)
        c = pose.camera_center()
        assert np.abs(pose.transform(c[None])[0]).max() < 1e-12

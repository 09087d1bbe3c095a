import numpy as np
import pytest

from bsig3d import synthetic
from bsig3d.errors import MalformedInputError, ParameterError, UnmatchedKeypointError
from bsig3d.geometry import PointCloud, mesh_resolution
from bsig3d.keypoints import KeypointSet, detect_iss, iss_saliency, load_keypoints, save_keypoints


def oracle_saliency(points, i, radius):
    """Direct per-point ISS scatter with a plain distance loop."""
    d = np.linalg.norm(points - points[i], axis=1)
    nbrs = [j for j in range(len(points)) if j != i and d[j] <= radius]
    weights = []
    for j in nbrs:
        dj = np.linalg.norm(points - points[j], axis=1)
        weights.append(1.0 / np.count_nonzero(dj <= radius))
    diff = points[nbrs] - points[i]
    cov = sum(w * np.outer(v, v) for w, v in zip(weights, diff)) / sum(weights)
    return np.sort(np.linalg.eigvalsh(cov))[::-1]


class TestIss:
    def test_plane_has_no_keypoints(self):
        kps = detect_iss(synthetic.plane_grid(30))
        assert len(kps) == 0

    def test_random_plane_has_no_keypoints(self, rng):
        xy = rng.uniform(0, 20, size=(2000, 2))
        cloud = PointCloud(np.column_stack([xy, np.zeros(len(xy))]))
        assert len(detect_iss(cloud)) == 0

    def test_plane_eigenvalues_fail_gamma21(self):
        # interior plane neighbourhoods are isotropic in-plane: l2/l1 close to 1
        cloud = synthetic.plane_grid(30)
        pts = cloud.points
        centre = int(np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
        l1, l2, l3 = oracle_saliency(pts, centre, 6.0)
        assert l2 / l1 > 0.975
        assert l3 == pytest.approx(0.0, abs=1e-12)

    def test_cube_keypoints_near_corners(self):
        cloud = synthetic.cube_surface(12)
        mr = mesh_resolution(cloud)
        kps = detect_iss(cloud)
        assert len(kps) > 0
        gaps = np.linalg.norm(
            kps.positions(cloud)[:, None, :] - synthetic.cube_corners()[None], axis=2
        ).min(axis=1)
        assert np.all(gaps <= 2 * mr)

    def test_saliency_matches_loop_oracle(self, rng):
        cloud = PointCloud(rng.normal(size=(150, 3)))
        radius = 0.9
        candidate, saliency = iss_saliency(cloud, radius, 0.975, 0.975, 5)
        for i in rng.choice(150, 15, replace=False):
            l1, l2, l3 = oracle_saliency(cloud.points, i, radius)
            n_nbrs = np.count_nonzero(np.linalg.norm(cloud.points - cloud.points[i], axis=1) <= radius) - 1
            if n_nbrs >= 5:
                assert saliency[i] == pytest.approx(max(l3, 0.0), rel=1e-9, abs=1e-15)
                assert candidate[i] == (l2 / l1 < 0.975 and l3 / l2 < 0.975 and l3 > 1e-12 * l1)
            else:
                assert not candidate[i]

    def test_nms_no_dominated_pair(self, blob):
        radius = 4 * mesh_resolution(blob)
        kps = detect_iss(blob, nms_radius=radius)
        pos = kps.positions(blob)
        d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
        close = (d <= radius) & ~np.eye(len(kps), dtype=bool)
        assert not close.any()

    def test_saliency_non_negative(self, blob):
        _, saliency = iss_saliency(blob, 6 * mesh_resolution(blob))
        assert np.all(saliency >= 0)

    def test_rigid_invariance_overlap(self, blob, rng):
        mr = mesh_resolution(blob)
        base = set(detect_iss(blob, 6 * mr, 4 * mr).indices.tolist())
        assert base
        for _ in range(20):
            moved = blob.transformed(synthetic.random_rotation(rng), rng.normal(size=3))
            got = set(detect_iss(moved, 6 * mr, 4 * mr).indices.tolist())
            assert len(base & got) / len(base | got) >= 0.95

    def test_tiny_cloud_warns(self):
        kps = detect_iss(PointCloud(np.eye(3)))
        assert len(kps) == 0 and kps.warning

    @pytest.mark.parametrize(
        "kwargs",
        [dict(gamma21=1.0), dict(gamma32=0.0), dict(min_neighbors=4), dict(salient_radius=-1.0, nms_radius=1.0)],
    )
    def test_parameter_errors(self, kwargs):
        with pytest.raises(ParameterError):
            detect_iss(synthetic.sphere(100), **kwargs)


class TestKeypointSet:
    def test_unique(self):
        with pytest.raises(ParameterError):
            KeypointSet([1, 1], [0.0, 0.0])

    def test_lengths(self):
        with pytest.raises(ParameterError):
            KeypointSet([1, 2], [0.0])


class TestKeypointFiles:
    @pytest.fixture
    def cloud(self):
        return PointCloud(np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)]))

    def test_indices(self, tmp_path, cloud):
        (tmp_path / "k.csv").write_text("0\n5\n9\n")
        assert load_keypoints(tmp_path / "k.csv", cloud).indices.tolist() == [0, 5, 9]

    def test_xyz_snaps(self, tmp_path, cloud):
        (tmp_path / "k.csv").write_text("7.0,0.0,0.0\n2.1, 0.3, 0\n")
        assert load_keypoints(tmp_path / "k.csv", cloud).indices.tolist() == [7, 2]

    def test_out_of_range(self, tmp_path, cloud):
        (tmp_path / "k.csv").write_text("10\n")
        with pytest.raises(ParameterError):
            load_keypoints(tmp_path / "k.csv", cloud)

    def test_far_xyz(self, tmp_path, cloud):
        (tmp_path / "k.csv").write_text("0,5,0\n")
        with pytest.raises(UnmatchedKeypointError):
            load_keypoints(tmp_path / "k.csv", cloud)

    def test_malformed(self, tmp_path, cloud):
        (tmp_path / "k.csv").write_text("1\nabc\n")
        with pytest.raises(MalformedInputError, match="line 2"):
            load_keypoints(tmp_path / "k.csv", cloud)

    def test_round_trip(self, tmp_path, cloud):
        kps = KeypointSet([3, 1, 8], [0.0, 0.0, 0.0])
        save_keypoints(tmp_path / "k.csv", kps)
        assert load_keypoints(tmp_path / "k.csv", cloud).indices.tolist() == [3, 1, 8]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from springgrasp.errors import (DegenerateGeometryError, FormatError,
                                InsufficientDataError)
from springgrasp.pointcloud import (BoundingBox, PointCloud, analytic_sdf,
                                    load_point_cloud, oriented_bbox,
                                    sample_synthetic, save_point_cloud,
                                    scaled_aabb, voxel_downsample)


class TestPointCloud:
    def test_minimum_points(self):
        with pytest.raises(InsufficientDataError):
            PointCloud(np.zeros((3, 3)))

    def test_rejects_nonfinite(self):
        pts = np.zeros((5, 3))
        pts[2, 1] = np.nan
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_rejects_non_unit_normals(self):
        pts = np.random.default_rng(0).normal(size=(5, 3))
        with pytest.raises(ValueError):
            PointCloud(pts, normals=pts * 2.0)

    def test_len(self):
        assert len(PointCloud(np.zeros((7, 3)))) == 7


class TestIO:
    def test_xyz_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, size=(20, 3))
        nrm = rng.normal(size=(20, 3))
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        cloud = PointCloud(pts, nrm)
        path = str(tmp_path / "c.xyz")
        save_point_cloud(cloud, path)
        back = load_point_cloud(path)
        np.testing.assert_allclose(back.points, pts, atol=1e-7)
        np.testing.assert_allclose(back.normals, nrm, atol=1e-6)

    def test_ply_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        cloud = PointCloud(rng.uniform(-1, 1, size=(15, 3)))
        path = str(tmp_path / "c.ply")
        save_point_cloud(cloud, path)
        back = load_point_cloud(path)
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-7)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_point_cloud("/nonexistent/cloud.xyz")

    def test_nan_rows_rejected_and_counted(self, tmp_path):
        path = tmp_path / "c.xyz"
        rows = ["0,0,0", "1,0,0", "nan,0,0", "0,1,0", "0,0,1"]
        path.write_text("\n".join(rows) + "\n")
        cloud = load_point_cloud(str(path))
        assert len(cloud) == 4
        assert cloud.rejected_rows == 1

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("1 2 3 4\n")
        with pytest.raises(FormatError):
            load_point_cloud(str(path))

    def test_truncated_ply(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 5\n"
                        "property float x\nproperty float y\n"
                        "property float z\nend_header\n0 0 0\n1 1 1\n")
        with pytest.raises(FormatError):
            load_point_cloud(str(path))

    def test_format_error_names_path(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("not a ply\n")
        with pytest.raises(FormatError) as err:
            load_point_cloud(str(path))
        assert "bad.ply" in str(err.value)


class TestBoundingBoxes:
    def test_scaled_aabb_of_unit_cube_cloud(self):
        cloud = sample_synthetic("box", (0.1, 0.1, 0.1), n=2000,
                                 rng=np.random.default_rng(3))
        box = scaled_aabb(cloud, 1.2)
        np.testing.assert_allclose(box.center, 0.0, atol=5e-3)
        np.testing.assert_allclose(box.half_extents, 0.06, atol=5e-3)
        assert len(box.corners()) == 8
        assert len(box.face_centers()) == 6

    def test_longest_edge_and_diagonal(self):
        box = BoundingBox(np.zeros(3), np.array([0.1, 0.2, 0.3]))
        assert box.longest_edge == pytest.approx(0.6)
        assert box.diagonal == pytest.approx(2 * np.linalg.norm([0.1, 0.2, 0.3]))

    def test_oriented_bbox_recovers_rotation(self):
        rng = np.random.default_rng(4)
        # elongated box cloud, rotated
        cloud = sample_synthetic("box", (0.3, 0.1, 0.05), n=3000, rng=rng)
        from scipy.spatial.transform import Rotation
        rot = Rotation.from_rotvec([0.0, 0.0, 0.7]).as_matrix()
        turned = PointCloud(cloud.points @ rot.T)
        box = oriented_bbox(turned)
        # principal axis aligned with the rotated long axis, up to sign
        principal = box.rotation[:, 0]
        expected = rot @ np.array([1.0, 0, 0])
        assert abs(principal @ expected) > 0.99
        np.testing.assert_allclose(np.sort(box.half_extents)[::-1],
                                   [0.15, 0.05, 0.025], atol=0.01)

    def test_corners_match_rotation(self):
        from scipy.spatial.transform import Rotation
        rot = Rotation.from_rotvec([0.3, 0.1, -0.2]).as_matrix()
        box = BoundingBox(np.array([1.0, 2, 3]), np.array([0.1, 0.2, 0.3]),
                          rotation=rot)
        corners = box.corners()
        local = (corners - box.center) @ rot
        np.testing.assert_allclose(
            np.abs(local), np.tile(box.half_extents, (8, 1)), atol=1e-12)

    def test_degenerate_extent(self):
        with pytest.raises(DegenerateGeometryError):
            BoundingBox(np.zeros(3), np.array([0.1, 0.0, 0.1]))


class TestVoxelDownsample:
    def test_reduces_count(self):
        cloud = sample_synthetic("sphere", (0.05,), n=1000,
                                 rng=np.random.default_rng(5))
        down = voxel_downsample(cloud, 0.01)
        assert 4 <= len(down) < len(cloud)

    def test_points_stay_near_surface(self):
        cloud = sample_synthetic("sphere", (0.05,), n=1000,
                                 rng=np.random.default_rng(6))
        down = voxel_downsample(cloud, 0.01)
        radii = np.linalg.norm(down.points, axis=1)
        assert np.abs(radii - 0.05).max() < 0.005

    def test_normals_stay_unit(self):
        cloud = sample_synthetic("sphere", (0.05,), n=500,
                                 rng=np.random.default_rng(7),
                                 with_normals=True)
        down = voxel_downsample(cloud, 0.02)
        if down.normals is not None:
            np.testing.assert_allclose(
                np.linalg.norm(down.normals, axis=1), 1.0, atol=1e-9)

    def test_bad_voxel(self):
        cloud = sample_synthetic("sphere", (0.05,), n=10,
                                 rng=np.random.default_rng(8))
        with pytest.raises(ValueError):
            voxel_downsample(cloud, 0.0)


class TestSyntheticShapes:
    @pytest.mark.parametrize("shape,params", [
        ("sphere", (0.05,)),
        ("box", (0.1, 0.08, 0.06)),
        ("cylinder", (0.04, 0.12)),
    ])
    def test_noiseless_samples_have_zero_sdf(self, shape, params):
        cloud = sample_synthetic(shape, params, n=500,
                                 rng=np.random.default_rng(9))
        sdf = analytic_sdf(shape, params)
        assert np.abs(sdf(cloud.points)).max() < 1e-9

    def test_noisy_samples_offset_along_normal(self):
        cloud = sample_synthetic("sphere", (0.05,), n=500, noise_sigma=0.002,
                                 rng=np.random.default_rng(10))
        sdf = analytic_sdf("sphere", (0.05,))
        vals = sdf(cloud.points)
        assert np.abs(vals).max() <= 4 * 0.002 + 1e-9
        assert np.std(vals) > 1e-4

    def test_deterministic_given_rng(self):
        a = sample_synthetic("box", (0.1, 0.1, 0.1), n=100,
                             rng=np.random.default_rng(11))
        b = sample_synthetic("box", (0.1, 0.1, 0.1), n=100,
                             rng=np.random.default_rng(11))
        np.testing.assert_array_equal(a.points, b.points)

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            analytic_sdf("torus", (0.1, 0.02))

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_box_sdf_sign_property(self, seed):
        rng = np.random.default_rng(seed)
        params = (0.1, 0.08, 0.06)
        sdf = analytic_sdf("box", params)
        p = rng.uniform(-0.1, 0.1, size=3)
        inside = np.all(np.abs(p) < np.asarray(params) / 2.0)
        val = float(sdf(p))
        if inside:
            assert val <= 0
        else:
            assert val >= 0

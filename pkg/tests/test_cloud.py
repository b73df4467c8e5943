"""Point cloud ops: projection analytics, sampling, merging, file formats."""

import numpy as np
import pytest

from uavsar3d.cloud import (
    PointCloud,
    downsample_to_coarse,
    farthest_point_sample,
    load_ply,
    load_xyz,
    merge,
    project,
    random_sample,
    save_ply,
    save_xyz,
)
from uavsar3d.geometry import RigidPose, point_mesh_distance
from uavsar3d.imaging import CameraModel, DepthImage, look_at, render_depth


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.inf, 0, 0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), labels=[1, 2])


def test_project_center_pixel():
    cam = CameraModel.centered(128, 128, 128.0)
    depth = np.zeros((128, 128))
    depth[64, 64] = 2.5  # the principal point pixel
    pc = project(DepthImage(depth, cam))
    assert len(pc) == 1
    assert np.allclose(pc.points[0], [0, 0, 2.5], atol=1e-12)


def test_project_empty_image():
    cam = CameraModel.centered(32, 32, 32.0)
    pc = project(DepthImage(np.zeros((32, 32)), cam))
    assert len(pc) == 0


def test_project_known_offset_pixel():
    cam = CameraModel.centered(64, 64, 100.0)
    depth = np.zeros((64, 64))
    depth[40, 50] = 3.0  # v=40, u=50
    pc = project(DepthImage(depth, cam))
    expected = np.array([(50 - 32) * 3.0 / 100.0, (40 - 32) * 3.0 / 100.0, 3.0])
    assert np.allclose(pc.points[0], expected, atol=1e-12)


def test_render_project_on_surface(box_scene):
    cam = CameraModel.centered(pose=look_at((2.5, 0.0, 1.0), (0, 0, 0.2)))
    depth, _ = render_depth(box_scene, cam)
    pc = project(depth)
    obj = box_scene.objects[0]
    dists = point_mesh_distance(pc.points, obj.mesh, obj.pose)
    footprint = 2.0 * np.sqrt(2.0) * depth.depth[depth.depth > 0] / cam.focal
    assert (dists <= footprint).mean() >= 0.99


def test_merge_concatenates_with_labels():
    a = PointCloud(np.zeros((3, 3)), labels=[1, 1, 1])
    b = PointCloud(np.ones((2, 3)), labels=[2, 2])
    m = merge([a, b])
    assert len(m) == 5
    assert m.labels.tolist() == [1, 1, 1, 2, 2]
    # labels drop if any input is unlabeled
    assert merge([a, PointCloud(np.ones((1, 3)))]).labels is None


def test_merge_single_and_empty():
    a = PointCloud(np.random.default_rng(0).random((4, 3)))
    assert np.array_equal(merge([a]).points, a.points)
    assert len(merge([])) == 0


def test_random_sample_protocol():
    rng = np.random.default_rng(1)
    pc = PointCloud(rng.random((1000, 3)))
    sub = random_sample(pc, 100, seed=5)
    assert len(sub) == 100
    # every sampled point is a member of the input
    full = {tuple(p) for p in pc.points}
    assert all(tuple(p) in full for p in sub.points)
    # k = N is a permutation
    perm = random_sample(pc, 1000, seed=2)
    assert {tuple(p) for p in perm.points} == full
    # different seeds differ
    assert not np.array_equal(random_sample(pc, 100, 1).points,
                              random_sample(pc, 100, 2).points)
    with pytest.raises(ValueError):
        random_sample(pc, 1001, seed=0)


def test_fps_subset_and_determinism():
    rng = np.random.default_rng(2)
    pc = PointCloud(rng.random((500, 3)), labels=np.arange(500))
    a = farthest_point_sample(pc, 32, seed=7)
    b = farthest_point_sample(pc, 32, seed=7)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.labels, b.labels)
    full = {tuple(p) for p in pc.points}
    assert all(tuple(p) in full for p in a.points)
    assert len(farthest_point_sample(pc, 500, seed=0)) == 500


def test_downsample_to_coarse_paths():
    rng = np.random.default_rng(3)
    big = PointCloud(rng.random((5000, 3)))
    assert len(downsample_to_coarse(big, seed=1)) == 1024
    exact = PointCloud(rng.random((1024, 3)))
    same = downsample_to_coarse(exact, seed=1)
    assert np.array_equal(same.points, exact.points)
    small = PointCloud(rng.random((600, 3)))
    padded = downsample_to_coarse(small, seed=1)
    assert len(padded) == 1024
    # the first 600 are the originals; pads are jittered members
    assert np.array_equal(padded.points[:600], small.points)
    pad_dist = np.sqrt(((padded.points[600:, None] - small.points[None]) ** 2).sum(-1)).min(1)
    assert pad_dist.max() < 1e-2  # 1 mm sigma jitter stays local
    with pytest.raises(ValueError):
        downsample_to_coarse(PointCloud(np.zeros((0, 3))), seed=0)


def test_xyz_round_trip(tmp_path):
    pc = PointCloud(np.random.default_rng(4).random((50, 3)))
    path = str(tmp_path / "c.xyz")
    save_xyz(pc, path)
    loaded = load_xyz(path)
    assert np.allclose(loaded.points, pc.points, atol=1e-8)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    rng = np.random.default_rng(5)
    pc = PointCloud(rng.random((64, 3)), labels=rng.integers(1, 4, 64))
    path = str(tmp_path / "c.ply")
    save_ply(pc, path, binary=binary)
    loaded = load_ply(path)
    if binary:
        assert np.array_equal(loaded.points, pc.points)
    else:
        assert np.allclose(loaded.points, pc.points, atol=1e-15)
    assert np.array_equal(loaded.labels, pc.labels)


def test_ply_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"not a ply\n")
    with pytest.raises(ValueError):
        load_ply(str(path))

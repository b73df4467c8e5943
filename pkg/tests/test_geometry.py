"""Meshes, poses, file loaders and surface sampling against analytic oracles."""

import numpy as np
import pytest

from uavsar3d.geometry import (
    EmptyMeshError,
    MeshLoadError,
    RigidPose,
    TriangleMesh,
    load_mesh,
    point_mesh_distance,
    sample_surface,
    write_off,
)
from uavsar3d.scenes import ground_truth_cloud, unit_cube

CHI2_CRIT_DF5_ALPHA01 = 15.0863  # chi-square critical value, df=5, alpha=0.01


# --- poses ------------------------------------------------------------------

def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        RigidPose(np.eye(3) * 1.001, np.zeros(3))
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # improper


def test_pose_orthonormal_within_tolerance():
    pose = RigidPose.from_axis_angle((1, 2, 3), 0.7, (0.1, 0.2, 0.3))
    r = pose.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() <= 1e-9
    assert np.linalg.det(r) > 0


def test_pose_preserves_pairwise_distances():
    rng = np.random.default_rng(0)
    pts = rng.random((50, 3))
    pose = RigidPose.from_axis_angle((0.3, -1, 2), 1.9, (5, -3, 2))
    moved = pose.apply(pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
    assert np.abs(d0 - d1).max() <= 1e-9


def test_pose_inverse_and_compose():
    pose = RigidPose.from_axis_angle((1, 0, 1), 0.5, (1, 2, 3))
    pts = np.random.default_rng(1).random((10, 3))
    assert np.allclose(pose.inverse().apply(pose.apply(pts)), pts, atol=1e-12)
    both = pose.compose(pose.inverse())
    assert np.allclose(both.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(both.translation, 0.0, atol=1e-12)


# --- meshes and loaders -----------------------------------------------------

def test_unit_cube_area(cube):
    # Oracle: sum of per-triangle cross-product areas of a unit cube is 6.
    assert cube.surface_area() == pytest.approx(6.0, abs=1e-12)
    assert cube.num_triangles == 12


def test_normals_unit_length(cube):
    assert np.abs(np.linalg.norm(cube.normals, axis=1) - 1.0).max() <= 1e-6


def test_single_triangle_normal(single_triangle):
    assert np.allclose(single_triangle.normals[0], [0, 0, 1], atol=1e-12)


def test_degenerate_triangles_dropped():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 1, 3]])  # second is collinear
    mesh = TriangleMesh(verts, tris)
    assert mesh.num_triangles == 1
    assert mesh.dropped_degenerate == 1


def test_empty_mesh_error():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(EmptyMeshError):
        TriangleMesh(verts, np.array([[0, 1, 2]]))


def test_index_out_of_range():
    with pytest.raises(MeshLoadError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))


def test_off_round_trip(tmp_path, cube):
    path = str(tmp_path / "cube.off")
    write_off(cube, path)
    loaded = load_mesh(path)
    assert loaded.num_triangles == 12
    assert loaded.surface_area() == pytest.approx(6.0, abs=1e-9)


def test_off_polygon_fan(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    mesh = load_mesh(str(path))
    assert mesh.num_triangles == 2
    assert mesh.surface_area() == pytest.approx(1.0, abs=1e-12)


def test_off_malformed(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n2 1 0\n0 0 0\n")
    with pytest.raises(MeshLoadError):
        load_mesh(str(path))


def test_ply_ascii_mesh(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\nformat ascii 1.0\n"
        "element vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
    )
    mesh = load_mesh(str(path))
    assert mesh.num_triangles == 1
    assert np.allclose(mesh.normals[0], [0, 0, 1])


def test_obj_mesh(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n")
    mesh = load_mesh(str(path))
    assert mesh.num_triangles == 1
    assert mesh.surface_area() == pytest.approx(0.5, abs=1e-12)


def test_unknown_format(tmp_path):
    path = tmp_path / "mesh.stl"
    path.write_text("")
    with pytest.raises(MeshLoadError):
        load_mesh(str(path))


# --- sampling ---------------------------------------------------------------

def test_sample_inside_triangle(single_triangle):
    pc = sample_surface(single_triangle, RigidPose.identity(), 100, seed=9)
    pts = pc.points
    assert len(pts) == 100
    # All points in the z=0 plane with barycentric coords in range.
    assert np.abs(pts[:, 2]).max() <= 1e-12
    assert (pts[:, 0] >= -1e-12).all() and (pts[:, 1] >= -1e-12).all()
    assert (pts[:, 0] + pts[:, 1] <= 1 + 1e-12).all()


def test_sample_zero_points(cube):
    assert len(sample_surface(cube, RigidPose.identity(), 0, seed=0)) == 0


def test_sample_deterministic(cube):
    a = sample_surface(cube, RigidPose.identity(), 500, seed=4)
    b = sample_surface(cube, RigidPose.identity(), 500, seed=4)
    assert np.array_equal(a.points, b.points)


def test_sample_on_surface(cube):
    pose = RigidPose.from_axis_angle((0, 1, 0), 0.4, (0.5, -0.2, 0.1))
    pc = sample_surface(cube, pose, 2000, seed=2)
    assert point_mesh_distance(pc.points, cube, pose).max() <= 1e-9


def test_cube_face_counts_chi_square(cube):
    # Multinomial oracle: 6000 area-uniform samples over 6 equal faces.
    pc = sample_surface(cube, RigidPose.identity(), 6000, seed=13)
    pts = pc.points
    planes = [
        np.abs(pts[:, 0] - 0.0), np.abs(pts[:, 0] - 1.0),
        np.abs(pts[:, 1] - 0.0), np.abs(pts[:, 1] - 1.0),
        np.abs(pts[:, 2] - 0.0), np.abs(pts[:, 2] - 1.0),
    ]
    face = np.argmin(np.stack(planes), axis=0)
    counts = np.bincount(face, minlength=6)
    chi2 = ((counts - 1000.0) ** 2 / 1000.0).sum()
    assert chi2 < CHI2_CRIT_DF5_ALPHA01


def test_translation_shifts_centroid(cube):
    t = np.array([0.3, -1.2, 2.5])
    a = sample_surface(cube, RigidPose.identity(), 1000, seed=5)
    b = sample_surface(cube, RigidPose(np.eye(3), t), 1000, seed=5)
    assert np.allclose(b.centroid() - a.centroid(), t, atol=1e-9)


def test_ground_truth_cloud_labels(two_box_scene):
    pc = ground_truth_cloud(two_box_scene, 4096, seed=3)
    assert len(pc) == 2 * 4096
    assert np.array_equal(np.unique(pc.labels), [1, 2])
    assert (np.bincount(pc.labels)[1:] == 4096).all()


def test_ground_truth_single_object_matches_sample(box_scene):
    obj = box_scene.objects[0]
    direct = sample_surface(obj.mesh, obj.pose, 256, seed=17)
    via_scene = ground_truth_cloud(box_scene, 256, seed=17)
    assert np.array_equal(direct.points, via_scene.points)


# --- point-to-mesh distance oracle ------------------------------------------

def test_point_mesh_distance_against_dense_sampling(cube):
    rng = np.random.default_rng(8)
    query = rng.random((40, 3)) * 3 - 1
    got = point_mesh_distance(query, cube)
    dense = sample_surface(cube, RigidPose.identity(), 200_000, seed=1).points
    approx = np.sqrt(((query[:, None] - dense[None]) ** 2).sum(-1)).min(axis=1)
    # Dense sampling overestimates by at most the sample spacing.
    assert (got <= approx + 1e-9).all()
    assert np.abs(got - approx).max() < 0.02


def test_point_mesh_distance_known_values(cube):
    query = np.array([
        [0.5, 0.5, 2.0],   # 1.0 above the top face
        [0.5, 0.5, 0.5],   # center: 0.5 from every face
        [2.0, 2.0, 0.5],   # nearest point is the (1,1,z) edge
    ])
    d = point_mesh_distance(query, cube)
    assert d[0] == pytest.approx(1.0, abs=1e-12)
    assert d[1] == pytest.approx(0.5, abs=1e-12)
    assert d[2] == pytest.approx(np.sqrt(2.0), abs=1e-12)

import numpy as np
import pytest

from uavsar3d.geometry import RigidPose, TriangleMesh
from uavsar3d.scenes import Scene, SceneObject, box_mesh, sphere_mesh, unit_cube


@pytest.fixture
def cube() -> TriangleMesh:
    return unit_cube()


@pytest.fixture
def single_triangle() -> TriangleMesh:
    return TriangleMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )


@pytest.fixture
def box_scene() -> Scene:
    return Scene([
        SceneObject(box_mesh((0.6, 0.5, 0.4), (0, 0, 0.2)), RigidPose.identity(), 1, "box"),
    ])


@pytest.fixture
def two_box_scene() -> Scene:
    return Scene([
        SceneObject(box_mesh((0.5, 0.5, 0.5), (0, 0, 0.25)),
                    RigidPose.from_axis_angle((0, 0, 1), 0.0, (-0.6, 0, 0)), 1, "a"),
        SceneObject(box_mesh((0.4, 0.4, 0.6), (0, 0, 0.3)),
                    RigidPose.from_axis_angle((0, 0, 1), 0.3, (0.6, 0, 0)), 2, "b"),
    ])


@pytest.fixture
def sphere_scene() -> Scene:
    return Scene([
        SceneObject(sphere_mesh(0.4, rings=20, segments=40, center=(0, 0, 0.5)),
                    RigidPose.identity(), 1, "sphere"),
    ])

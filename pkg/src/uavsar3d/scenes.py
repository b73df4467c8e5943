"""Multi-object scenes: labeled posed meshes, primitive generators,
scene description files, and ground-truth surface clouds.

Scene labels are distinct and contiguous from 1; the floor plane is z=0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from uavsar3d.cloud import PointCloud, merge
from uavsar3d.geometry import RigidPose, TriangleMesh, load_mesh, sample_surface


@dataclass
class SceneObject:
    mesh: TriangleMesh
    pose: RigidPose
    label: int
    name: str = ""

    def __post_init__(self):
        if self.label < 1:
            raise ValueError("object labels start at 1")


@dataclass
class Scene:
    objects: list[SceneObject]

    def __post_init__(self):
        if not self.objects:
            raise ValueError("a scene needs at least one object")
        labels = sorted(o.label for o in self.objects)
        if labels != list(range(1, len(self.objects) + 1)):
            raise ValueError("labels must be distinct and contiguous from 1, got %s" % labels)

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    def object_by_label(self, label: int) -> SceneObject:
        for obj in self.objects:
            if obj.label == label:
                return obj
        raise KeyError(label)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds enclosing all transformed vertices."""
        los, his = [], []
        for obj in self.objects:
            v = obj.pose.apply(obj.mesh.vertices)
            los.append(v.min(axis=0))
            his.append(v.max(axis=0))
        return np.min(los, axis=0), np.max(his, axis=0)

    def combined_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World-frame (vertices, triangles, per-triangle labels) over all objects."""
        verts, tris, labels = [], [], []
        offset = 0
        for obj in sorted(self.objects, key=lambda o: o.label):
            v = obj.pose.apply(obj.mesh.vertices)
            verts.append(v)
            tris.append(obj.mesh.triangles + offset)
            labels.append(np.full(obj.mesh.num_triangles, obj.label, dtype=np.int64))
            offset += len(v)
        return (
            np.concatenate(verts, axis=0),
            np.concatenate(tris, axis=0),
            np.concatenate(labels, axis=0),
        )


def ground_truth_cloud(scene: Scene, points_per_object: int, seed: int) -> PointCloud:
    """Labeled area-uniform surface samples, points_per_object per object.

    Object with label L samples with seed + (L - 1), so a single-object
    scene reproduces sample_surface(mesh, pose, k, seed) exactly.
    """
    if points_per_object < 1:
        raise ValueError("points_per_object must be >= 1")
    parts = []
    for obj in sorted(scene.objects, key=lambda o: o.label):
        pc = sample_surface(obj.mesh, obj.pose, points_per_object, seed + obj.label - 1)
        parts.append(PointCloud(pc.points, np.full(len(pc), obj.label, dtype=np.int64)))
    return merge(parts)


# ---------------------------------------------------------------------------
# Parametric primitives

def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    sx, sy, sz = size
    cx, cy, cz = center
    corners = np.array([
        [x, y, z]
        for z in (cz - sz / 2, cz + sz / 2)
        for y in (cy - sy / 2, cy + sy / 2)
        for x in (cx - sx / 2, cx + sx / 2)
    ])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # bottom, top
        (0, 4, 5, 1), (2, 3, 7, 6),  # front, back
        (0, 2, 6, 4), (1, 5, 7, 3),  # left, right
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriangleMesh(corners, np.array(tris, dtype=np.int64))


def unit_cube() -> TriangleMesh:
    """Axis-aligned unit cube spanning [0, 1]^3 (8 vertices, 12 triangles)."""
    return box_mesh((1.0, 1.0, 1.0), (0.5, 0.5, 0.5))


def sphere_mesh(radius=0.5, rings=16, segments=32, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """UV sphere with pole vertices on the +/- z axis."""
    cx, cy, cz = center
    verts = [[cx, cy, cz + radius]]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append([
                cx + radius * np.sin(phi) * np.cos(theta),
                cy + radius * np.sin(phi) * np.sin(theta),
                cz + radius * np.cos(phi),
            ])
    verts.append([cx, cy, cz - radius])
    top, bottom = 0, len(verts) - 1
    ring = lambda i: 1 + (i - 1) * segments
    tris = []
    for j in range(segments):
        tris.append((top, ring(1) + j, ring(1) + (j + 1) % segments))
    for i in range(1, rings - 1):
        for j in range(segments):
            a = ring(i) + j
            b = ring(i) + (j + 1) % segments
            c = ring(i + 1) + j
            d = ring(i + 1) + (j + 1) % segments
            tris.append((a, c, d))
            tris.append((a, d, b))
    for j in range(segments):
        tris.append((bottom, ring(rings - 1) + (j + 1) % segments, ring(rings - 1) + j))
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))


def cylinder_mesh(radius=0.3, height=1.0, segments=32, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed cylinder, axis +z, centered at `center`."""
    cx, cy, cz = center
    lo, hi = cz - height / 2, cz + height / 2
    verts = []
    for z in (lo, hi):
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append([cx + radius * np.cos(theta), cy + radius * np.sin(theta), z])
    verts.append([cx, cy, lo])
    verts.append([cx, cy, hi])
    blo, bhi = len(verts) - 2, len(verts) - 1
    tris = []
    for j in range(segments):
        jn = (j + 1) % segments
        tris.append((j, jn, segments + j))
        tris.append((jn, segments + jn, segments + j))
        tris.append((blo, jn, j))
        tris.append((bhi, segments + j, segments + jn))
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    verts, tris = [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def toy_car(length=1.2, width=0.5, height=0.42) -> TriangleMesh:
    """Boxy car: body slab plus cabin, wheels ignored, resting on z=0."""
    body_h = height * 0.55
    cabin_h = height - body_h
    body = box_mesh((length, width, body_h), (0.0, 0.0, body_h / 2))
    cabin = box_mesh(
        (length * 0.55, width * 0.9, cabin_h),
        (-length * 0.05, 0.0, body_h + cabin_h / 2),
    )
    return merge_meshes([body, cabin])


def toy_desk(width=1.2, depth=0.6, height=0.75, top_thickness=0.05, leg=0.06) -> TriangleMesh:
    """Four-legged desk resting on z=0."""
    top = box_mesh((width, depth, top_thickness), (0.0, 0.0, height - top_thickness / 2))
    parts = [top]
    leg_h = height - top_thickness
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(box_mesh(
                (leg, leg, leg_h),
                (sx * (width / 2 - leg / 2), sy * (depth / 2 - leg / 2), leg_h / 2),
            ))
    return merge_meshes(parts)


def toy_robot_arm(base_radius=0.18, base_height=0.1, column_height=0.5, arm_length=0.45) -> TriangleMesh:
    """Stylized arm: cylinder base, vertical column, horizontal forearm."""
    base = cylinder_mesh(base_radius, base_height, 24, (0.0, 0.0, base_height / 2))
    column = box_mesh((0.1, 0.1, column_height), (0.0, 0.0, base_height + column_height / 2))
    arm = box_mesh(
        (arm_length, 0.09, 0.09),
        (arm_length / 2 - 0.05, 0.0, base_height + column_height + 0.045),
    )
    return merge_meshes([base, column, arm])


PRIMITIVES = {
    "box": box_mesh,
    "unit_cube": unit_cube,
    "sphere": sphere_mesh,
    "cylinder": cylinder_mesh,
    "toy_car": toy_car,
    "toy_desk": toy_desk,
    "toy_robot_arm": toy_robot_arm,
}


def make_primitive(kind: str, **params) -> TriangleMesh:
    if kind not in PRIMITIVES:
        raise ValueError("unknown primitive %r (known: %s)" % (kind, sorted(PRIMITIVES)))
    return PRIMITIVES[kind](**params)


# ---------------------------------------------------------------------------
# Reference scenes (car + desk, and car + desk + robot arm)

def two_object_scene() -> Scene:
    return Scene([
        SceneObject(toy_car(), RigidPose.from_axis_angle((0, 0, 1), 0.35, (-0.75, 0.15, 0.0)), 1, "car"),
        SceneObject(toy_desk(), RigidPose.from_axis_angle((0, 0, 1), -0.2, (0.8, -0.1, 0.0)), 2, "desk"),
    ])


def three_object_scene() -> Scene:
    return Scene([
        SceneObject(toy_car(), RigidPose.from_axis_angle((0, 0, 1), 0.35, (-0.9, 0.5, 0.0)), 1, "car"),
        SceneObject(toy_desk(), RigidPose.from_axis_angle((0, 0, 1), -0.2, (0.9, 0.4, 0.0)), 2, "desk"),
        SceneObject(toy_robot_arm(), RigidPose.from_axis_angle((0, 0, 1), 1.1, (0.0, -0.9, 0.0)), 3, "arm"),
    ])


def random_box_scene(seed: int) -> Scene:
    """Single random box at the origin: the refiner toy-suite generator."""
    rng = np.random.default_rng(seed)
    sx, sy = rng.uniform(0.35, 0.9, size=2)
    sz = rng.uniform(0.3, 0.8)
    yaw = rng.uniform(0.0, np.pi / 2)
    mesh = box_mesh((sx, sy, sz), (0.0, 0.0, sz / 2))
    return Scene([SceneObject(mesh, RigidPose.from_axis_angle((0, 0, 1), yaw), 1, "box")])


def primitive_suite() -> list[Scene]:
    """Five small fixed scenes used by geometry round-trip checks and demos."""
    eye = RigidPose.identity()
    return [
        Scene([SceneObject(box_mesh((0.8, 0.6, 0.5), (0, 0, 0.25)), eye, 1, "box")]),
        Scene([SceneObject(sphere_mesh(0.4, center=(0, 0, 0.4)), eye, 1, "sphere")]),
        Scene([SceneObject(cylinder_mesh(0.25, 0.8, center=(0, 0, 0.4)), eye, 1, "cylinder")]),
        Scene([
            SceneObject(box_mesh((0.5, 0.5, 0.5), (0, 0, 0.25)),
                        RigidPose.from_axis_angle((0, 0, 1), 0.0, (-0.6, 0, 0)), 1, "box_a"),
            SceneObject(box_mesh((0.4, 0.4, 0.7), (0, 0, 0.35)),
                        RigidPose.from_axis_angle((0, 0, 1), 0.6, (0.6, 0, 0)), 2, "box_b"),
        ]),
        two_object_scene(),
    ]


# ---------------------------------------------------------------------------
# Scene description files

def _pose_from_spec(spec: dict) -> RigidPose:
    translation = spec.get("translation", (0.0, 0.0, 0.0))
    ax = spec.get("axis_angle", (0.0, 0.0, 1.0, 0.0))
    if len(ax) != 4:
        raise ValueError("axis_angle must be [ax, ay, az, angle_rad]")
    return RigidPose.from_axis_angle(ax[:3], float(ax[3]), translation)


def load_scene_file(path: str) -> Scene:
    """Load a declarative scene description (YAML).

    Each object entry gives `label`, `name`, a `pose`
    ({translation, axis_angle}), and either `mesh` (path, relative to the
    scene file) or `primitive` ({kind, ...params}).
    """
    import os

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "objects" not in doc:
        raise ValueError("scene file must contain an 'objects' list: %s" % path)
    base = os.path.dirname(os.path.abspath(path))
    objects = []
    for entry in doc["objects"]:
        if "primitive" in entry:
            spec = dict(entry["primitive"])
            mesh = make_primitive(spec.pop("kind"), **spec)
        elif "mesh" in entry:
            mesh_path = entry["mesh"]
            if not os.path.isabs(mesh_path):
                mesh_path = os.path.join(base, mesh_path)
            mesh = load_mesh(mesh_path)
        else:
            raise ValueError("scene object needs 'mesh' or 'primitive'")
        objects.append(SceneObject(
            mesh,
            _pose_from_spec(entry.get("pose", {})),
            int(entry["label"]),
            str(entry.get("name", "")),
        ))
    return Scene(objects)

"""Rigid poses, triangle meshes, mesh file I/O and surface sampling.

World frame is z-up with all lengths in meters. Meshes are validated on
construction: indices in range, degenerate faces dropped, unit normals.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from uavsar3d.cloud import PointCloud

DEGENERATE_AREA = 1e-12  # m^2; faces below this are dropped at load
ORTHONORMAL_TOL = 1e-9


class MeshLoadError(ValueError):
    """Malformed mesh file."""


class EmptyMeshError(MeshLoadError):
    """No valid triangles remain after filtering."""


@dataclass(frozen=True)
class RigidPose:
    """Proper rigid transform: p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal (max |R^T R - I| = %g)" % err)
        if np.linalg.det(r) <= 0:
            raise ValueError("rotation must be proper (det +1)")

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        """Rodrigues rotation about `axis` by `angle` radians, then translate."""
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            if angle != 0.0:
                raise ValueError("zero axis with nonzero angle")
            return RigidPose(np.eye(3), translation)
        k = axis / norm
        kx = np.array([
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ])
        r = np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
        # Re-orthonormalize so the constructor tolerance holds exactly.
        u, _, vt = np.linalg.svd(r)
        return RigidPose(u @ vt, translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose equal to applying `other` first, then self."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass
class TriangleMesh:
    """Validated triangle soup with derived per-face normals and areas."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    dropped_degenerate: int = field(init=False, default=0)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshLoadError("triangle index out of range")
        e1 = v[t[:, 1]] - v[t[:, 0]] if len(t) else np.zeros((0, 3))
        e2 = v[t[:, 2]] - v[t[:, 0]] if len(t) else np.zeros((0, 3))
        cross = np.cross(e1, e2)
        double_area = np.linalg.norm(cross, axis=1)
        keep = double_area / 2.0 >= DEGENERATE_AREA
        self.dropped_degenerate = int(len(t) - keep.sum())
        t = t[keep]
        cross = cross[keep]
        double_area = double_area[keep]
        if len(t) == 0:
            raise EmptyMeshError("mesh has no non-degenerate triangles")
        self.vertices = v
        self.triangles = t
        self.normals = cross / double_area[:, None]
        self.areas = double_area / 2.0

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def surface_area(self) -> float:
        return float(self.areas.sum())

    def transformed(self, pose: RigidPose) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


# ---------------------------------------------------------------------------
# Mesh file readers (OFF, ASCII PLY, OBJ)

def load_mesh(path: str, fmt: str | None = None) -> TriangleMesh:
    """Load a mesh file; format inferred from the extension unless given."""
    if fmt is None:
        fmt = os.path.splitext(path)[1].lstrip(".").lower()
    fmt = fmt.lower()
    if fmt == "off":
        return _load_off(path)
    if fmt == "ply":
        return _load_ply(path)
    if fmt == "obj":
        return _load_obj(path)
    raise MeshLoadError("unsupported mesh format %r" % fmt)


def _fan(indices: list[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _load_off(path: str) -> TriangleMesh:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshLoadError("missing OFF header in %s" % path)
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces: list[tuple[int, int, int]] = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            idx = [int(x) for x in tokens[pos + 1:pos + 1 + cnt]]
            pos += 1 + cnt
            faces.extend(_fan(idx))
    except (IndexError, ValueError) as exc:
        raise MeshLoadError("malformed OFF file %s: %s" % (path, exc)) from exc
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def _load_ply(path: str) -> TriangleMesh:
    with open(path) as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise MeshLoadError("missing ply header in %s" % path)
        fmt_line = fh.readline().strip()
        if not fmt_line.startswith("format ascii"):
            raise MeshLoadError("mesh PLY reader supports ASCII only (%s)" % path)
        counts: list[tuple[str, int]] = []
        props: dict[str, list[str]] = {}
        current = None
        for line in fh:
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("element"):
                _, name, num = line.split()
                counts.append((name, int(num)))
                current = name
                props[name] = []
            elif line.startswith("property") and current is not None:
                props[current].append(line.split()[-1])
            elif line == "end_header":
                break
        else:
            raise MeshLoadError("missing end_header in %s" % path)
        data = {name: [] for name, _ in counts}
        for name, num in counts:
            for _ in range(num):
                row = fh.readline().split()
                if not row:
                    raise MeshLoadError("truncated PLY file %s" % path)
                data[name].append(row)
    try:
        vprops = props["vertex"]
        xi, yi, zi = vprops.index("x"), vprops.index("y"), vprops.index("z")
        verts = np.array(
            [[r[xi], r[yi], r[zi]] for r in data["vertex"]], dtype=np.float64
        )
        faces: list[tuple[int, int, int]] = []
        for row in data.get("face", []):
            cnt = int(row[0])
            faces.extend(_fan([int(x) for x in row[1:1 + cnt]]))
    except (KeyError, ValueError, IndexError) as exc:
        raise MeshLoadError("malformed PLY file %s: %s" % (path, exc)) from exc
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def _load_obj(path: str) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    try:
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.extend(_fan(idx))
    except (ValueError, IndexError) as exc:
        raise MeshLoadError("malformed OBJ file %s: %s" % (path, exc)) from exc
    return TriangleMesh(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
    )


def write_off(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n%d %d 0\n" % (len(mesh.vertices), len(mesh.triangles)))
        for v in mesh.vertices:
            fh.write("%.17g %.17g %.17g\n" % tuple(v))
        for t in mesh.triangles:
            fh.write("3 %d %d %d\n" % tuple(t))


# ---------------------------------------------------------------------------
# Surface sampling

def sample_surface(mesh: TriangleMesh, pose: RigidPose, k: int, seed: int) -> PointCloud:
    """Area-uniform surface samples of the posed mesh, k points, seeded.

    Triangles are picked with probability proportional to area, then a
    uniform barycentric point is drawn on each (fold trick).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return PointCloud(np.zeros((0, 3)))
    rng = np.random.default_rng(seed)
    probs = mesh.areas / mesh.areas.sum()
    tri = rng.choice(mesh.num_triangles, size=k, p=probs)
    u = rng.random(k)
    v = rng.random(k)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(pose.apply(pts))


# ---------------------------------------------------------------------------
# Point-to-mesh distance (exact closest point per triangle, min over faces)

def point_mesh_distance(points: np.ndarray, mesh: TriangleMesh,
                        pose: RigidPose | None = None) -> np.ndarray:
    """Exact Euclidean distance from each point to the posed mesh surface."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    verts = pose.apply(mesh.vertices) if pose is not None else mesh.vertices
    tris = mesh.triangles
    n = len(points)
    out = np.full(n, np.inf)
    if n == 0:
        return out
    chunk = max(1, int(2e6 // max(len(tris), 1)) + 1)
    b0 = verts[tris[:, 0]]
    e0 = verts[tris[:, 1]] - b0
    e1 = verts[tris[:, 2]] - b0
    for lo in range(0, n, chunk):
        p = points[lo:lo + chunk]
        d2 = _point_triangle_sq(p, b0, e0, e1)
        out[lo:lo + chunk] = np.sqrt(d2.min(axis=1))
    return out


def _point_triangle_sq(points, b0, e0, e1):
    """Squared distances (P, T) via the standard closest-point regions."""
    d = b0[None, :, :] - points[:, None, :]
    a = (e0 * e0).sum(1)[None, :]
    b = (e0 * e1).sum(1)[None, :]
    c = (e1 * e1).sum(1)[None, :]
    dd = (d * e0[None, :, :]).sum(-1)
    e = (d * e1[None, :, :]).sum(-1)
    det = np.maximum(a * c - b * b, 1e-300)
    s = b * e - c * dd
    t = b * dd - a * e

    a = np.broadcast_to(a, s.shape)
    b = np.broadcast_to(b, s.shape)
    c = np.broadcast_to(c, s.shape)

    inside = s + t <= det
    r0 = inside & (s >= 0) & (t >= 0)          # interior
    r3 = inside & (s < 0) & (t >= 0)           # edge e1
    r5 = inside & (s >= 0) & (t < 0)           # edge e0
    r4 = inside & (s < 0) & (t < 0)            # corner at b0
    out1 = ~inside & (s >= 0) & (t >= 0)       # edge opposite b0
    out2 = ~inside & (s < 0)
    out6 = ~inside & (s >= 0) & (t < 0)

    sn = np.where(r0, s / det, 0.0)
    tn = np.where(r0, t / det, 0.0)

    clamp = lambda x: np.clip(x, 0.0, 1.0)
    safe = lambda num, den: num / np.where(np.abs(den) < 1e-300, 1e-300, den)

    tn = np.where(r3, clamp(safe(-e, c)), tn)
    sn = np.where(r5, clamp(safe(-dd, a)), sn)
    pick_s = dd < 0
    sn = np.where(r4 & pick_s, clamp(safe(-dd, a)), sn)
    tn = np.where(r4 & ~pick_s, clamp(safe(-e, c)), tn)

    denom = a - 2.0 * b + c
    s1 = clamp(safe(c + e - b - dd, denom))
    sn = np.where(out1, s1, sn)
    tn = np.where(out1, 1.0 - s1, tn)

    use_edge = (c + e) > (b + dd)
    s2 = clamp(safe((c + e) - (b + dd), denom))
    sn = np.where(out2 & use_edge, s2, sn)
    tn = np.where(out2 & use_edge, 1.0 - s2, tn)
    tn = np.where(out2 & ~use_edge, clamp(safe(-e, c)), tn)
    sn = np.where(out2 & ~use_edge, 0.0, sn)

    use_edge6 = (a + dd) > (b + e)
    t6 = clamp(safe((a + dd) - (b + e), denom))
    tn = np.where(out6 & use_edge6, t6, tn)
    sn = np.where(out6 & use_edge6, 1.0 - t6, sn)
    sn = np.where(out6 & ~use_edge6, clamp(safe(-dd, a)), sn)
    tn = np.where(out6 & ~use_edge6, 0.0, tn)

    closest = d + sn[..., None] * e0[None, :, :] + tn[..., None] * e1[None, :, :]
    return (closest * closest).sum(-1)

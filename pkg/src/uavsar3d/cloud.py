"""Point clouds: projection from depth images, merging, sampling, file I/O.

Coordinates are meters in the world frame. Labels, when present, are
per-point positive object ids (same convention as segmentation masks).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from uavsar3d import kernels

if TYPE_CHECKING:
    from uavsar3d.imaging import DepthImage

COARSE_SIZE = 1024
PAD_JITTER_M = 1e-3  # jitter for with-replacement padding below the coarse size


@dataclass
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise ValueError("labels length must match point count")

    def __len__(self) -> int:
        return len(self.points)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def select(self, idx: np.ndarray) -> "PointCloud":
        labels = self.labels[idx] if self.labels is not None else None
        return PointCloud(self.points[idx], labels)

    def for_label(self, label: int) -> "PointCloud":
        if self.labels is None:
            raise ValueError("cloud has no labels")
        return self.select(np.nonzero(self.labels == label)[0])


def project(depth: "DepthImage") -> PointCloud:
    """Back-project every foreground pixel of a depth image to world space.

    Pixel (u, v) with depth d maps to camera-frame
    ((u - c_x) d / f, (v - c_y) d / f, d), then through the inverse of the
    camera's world-to-camera pose. Points come out in raster order.
    """
    cam = depth.camera
    vv, uu = np.nonzero(depth.depth > 0)
    d = depth.depth[vv, uu]
    x = (uu - cam.cx) * d / cam.focal
    y = (vv - cam.cy) * d / cam.focal
    pts_cam = np.stack([x, y, d], axis=1)
    pts = cam.pose.inverse().apply(pts_cam)
    return PointCloud(pts)


def merge(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate clouds; labels survive only if every input carries them."""
    if not clouds:
        return PointCloud(np.zeros((0, 3)))
    points = np.concatenate([c.points for c in clouds], axis=0)
    if all(c.labels is not None for c in clouds):
        labels = np.concatenate([c.labels for c in clouds], axis=0)
    else:
        labels = None
    return PointCloud(points, labels)


def random_sample(pc: PointCloud, k: int, seed: int) -> PointCloud:
    """k points drawn uniformly without replacement; error if k > N."""
    if k > len(pc):
        raise ValueError("cannot sample %d points from %d" % (k, len(pc)))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pc), size=k, replace=False)
    return pc.select(idx)


def farthest_point_sample(pc: PointCloud, k: int, seed: int) -> PointCloud:
    """Greedy max-min subset of k points; the seed picks the first point."""
    n = len(pc)
    if n < 1:
        raise ValueError("cannot sample an empty cloud")
    if k > n:
        raise ValueError("cannot sample %d points from %d" % (k, n))
    first = int(np.random.default_rng(seed).integers(n))
    idx = kernels.farthest_point_indices(pc.points, k, first)
    return pc.select(idx)


def downsample_to_coarse(pc: PointCloud, size: int = COARSE_SIZE, seed: int = 0) -> PointCloud:
    """Fixed-size coarse cloud: FPS down, or pad by jittered resampling up.

    Inputs below `size` are padded with replacement plus Gaussian jitter
    (sigma 1 mm) so downstream stage contracts stay fixed-size.
    """
    n = len(pc)
    if n == 0:
        raise ValueError("cannot form a coarse cloud from an empty cloud")
    if n == size:
        return pc
    if n > size:
        return farthest_point_sample(pc, size, seed)
    rng = np.random.default_rng(seed)
    extra = rng.integers(n, size=size - n)
    pad = pc.points[extra] + rng.normal(0.0, PAD_JITTER_M, size=(size - n, 3))
    points = np.concatenate([pc.points, pad], axis=0)
    labels = None
    if pc.labels is not None:
        labels = np.concatenate([pc.labels, pc.labels[extra]])
    return PointCloud(points, labels)


# ---------------------------------------------------------------------------
# PLY / XYZ

def save_xyz(pc: PointCloud, path: str) -> None:
    with open(path, "w") as fh:
        for p in pc.points:
            fh.write("%.9f %.9f %.9f\n" % tuple(p))


def load_xyz(path: str) -> PointCloud:
    pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return PointCloud(pts[:, :3])


def save_ply(pc: PointCloud, path: str, binary: bool = True) -> None:
    """Write PLY (binary little-endian by default; ASCII otherwise).

    A per-vertex int32 `label` property is written when the cloud is
    labeled.
    """
    has_labels = pc.labels is not None
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", "format %s 1.0" % fmt, "element vertex %d" % len(pc)]
    header += ["property double x", "property double y", "property double z"]
    if has_labels:
        header.append("property int label")
    header.append("end_header")
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            for i, p in enumerate(pc.points):
                fh.write(struct.pack("<3d", *p))
                if has_labels:
                    fh.write(struct.pack("<i", int(pc.labels[i])))
    else:
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            for i, p in enumerate(pc.points):
                row = "%.17g %.17g %.17g" % tuple(p)
                if has_labels:
                    row += " %d" % pc.labels[i]
                fh.write(row + "\n")


_PLY_ITEM = {
    "char": ("b", 1), "uchar": ("B", 1), "int8": ("b", 1), "uint8": ("B", 1),
    "short": ("h", 2), "ushort": ("H", 2), "int16": ("h", 2), "uint16": ("H", 2),
    "int": ("i", 4), "uint": ("I", 4), "int32": ("i", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4), "double": ("d", 8), "float64": ("d", 8),
}


def load_ply(path: str) -> PointCloud:
    """Read a point PLY (ASCII or binary little-endian); mesh elements ignored."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError("not a PLY file: %s" % path)
        fmt = None
        nvert = 0
        vprops: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("missing end_header in %s" % path)
            parts = line.decode("ascii", "replace").split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    nvert = int(parts[2])
            elif parts[0] == "property" and in_vertex:
                if parts[1] == "list":
                    raise ValueError("list property in vertex element")
                vprops.append((parts[1], parts[2]))
            elif parts[0] == "end_header":
                break
        names = [n for _, n in vprops]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise ValueError("PLY vertex element lacks %s" % axis)
        if fmt == "ascii":
            rows = [fh.readline().split() for _ in range(nvert)]
            cols = {n: np.array([r[i] for r in rows], dtype=np.float64)
                    for i, (_, n) in enumerate(vprops)}
        elif fmt == "binary_little_endian":
            rec = "<" + "".join(_PLY_ITEM[t][0] for t, _ in vprops)
            size = struct.calcsize(rec)
            raw = fh.read(size * nvert)
            rows = list(struct.iter_unpack(rec, raw))
            cols = {n: np.array([r[i] for r in rows], dtype=np.float64)
                    for i, (_, n) in enumerate(vprops)}
        else:
            raise ValueError("unsupported PLY format %r" % fmt)
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    labels = cols["label"].astype(np.int64) if "label" in cols else None
    return PointCloud(pts, labels)

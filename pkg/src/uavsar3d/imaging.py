"""Depth-image stage: ray-cast rendering, generator-imperfection
degradation, per-pixel segmentation, annotation encoding, splitting.

Depth images store meters with 0 = background; cameras use the pinhole
model with x right, y down, z forward (world-to-camera pose).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import yaml
from scipy import ndimage

from uavsar3d import kernels
from uavsar3d.geometry import RigidPose
from uavsar3d.scenes import Scene


@dataclass(frozen=True)
class CameraModel:
    width: int = 128
    height: int = 128
    focal: float = 128.0
    cx: float = 64.0
    cy: float = 64.0
    pose: RigidPose = field(default_factory=RigidPose.identity)

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @staticmethod
    def centered(width: int = 128, height: int = 128, focal: float = 128.0,
                 pose: RigidPose | None = None) -> "CameraModel":
        return CameraModel(width, height, focal, width / 2.0, height / 2.0,
                           pose if pose is not None else RigidPose.identity())

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height, "focal": self.focal,
            "cx": self.cx, "cy": self.cy,
            "rotation": [float(x) for x in self.pose.rotation.ravel()],
            "translation": [float(x) for x in self.pose.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraModel":
        pose = RigidPose(np.array(d["rotation"]).reshape(3, 3), np.array(d["translation"]))
        return CameraModel(int(d["width"]), int(d["height"]), float(d["focal"]),
                           float(d["cx"]), float(d["cy"]), pose)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """World-to-camera pose with +z toward `target` and +y pointing down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise ValueError("eye and target coincide")
    z = fwd / norm
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-12:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return RigidPose(rot, -rot @ eye)


@dataclass
class DepthImage:
    depth: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise ValueError("depth shape must match the camera size")
        if not np.isfinite(self.depth).all() or (self.depth < 0).any():
            raise ValueError("depths must be finite and >= 0")

    def foreground(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class SegmentationMask:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if (self.labels < 0).any():
            raise ValueError("labels must be >= 0")

    def present_labels(self) -> list[int]:
        vals = np.unique(self.labels)
        return [int(v) for v in vals if v > 0]


@dataclass
class AnnotationImage:
    rgb: np.ndarray
    palette: dict[int, tuple[int, int, int]]

    def __post_init__(self):
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError("annotation image must be HxWx3")


class DepthGenerator(Protocol):
    """Pluggable stage-1 contract: heatmap for one viewpoint -> depth image."""

    def depth_for_view(self, heatmap, camera: CameraModel, view_index: int) -> DepthImage:
        ...


# ---------------------------------------------------------------------------
# Rendering

def camera_rays(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray origins/directions for every pixel, raster order.

    Directions have unit camera-frame z, so the ray parameter equals the
    pinhole z-depth directly.
    """
    u = np.arange(camera.width, dtype=np.float64)
    v = np.arange(camera.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([
        (uu - camera.cx) / camera.focal,
        (vv - camera.cy) / camera.focal,
        np.ones_like(uu),
    ], axis=-1).reshape(-1, 3)
    inv = camera.pose.inverse()
    dirs = d_cam @ inv.rotation.T
    origins = np.broadcast_to(inv.translation, dirs.shape).copy()
    return origins, dirs


def render_depth(scene: Scene, camera: CameraModel) -> tuple[DepthImage, SegmentationMask]:
    """Nearest-hit depth and owning-object label per pixel (0 = background)."""
    verts, tris, tri_labels = scene.combined_arrays()
    origins, dirs = camera_rays(camera)
    t, tri = kernels.ray_cast(origins, dirs, verts, tris)
    depth = np.where(np.isfinite(t), t, 0.0).reshape(camera.height, camera.width)
    labels = np.where(tri >= 0, tri_labels[np.maximum(tri, 0)], 0)
    labels = labels.reshape(camera.height, camera.width)
    return DepthImage(depth, camera), SegmentationMask(labels)


def degrade(depth: DepthImage, noise_sigma: float = 0.0, dropout: float = 0.0,
            erosion: int = 0, seed: int = 0) -> DepthImage:
    """Emulate an imperfect stage-1 generator on an oracle depth image.

    Foreground pixels get additive Gaussian depth noise, independent
    dropout to background, then an r-pixel erosion of the foreground
    boundary. Deterministic per seed.
    """
    if not (0.0 <= dropout <= 1.0):
        raise ValueError("dropout must be in [0, 1]")
    if noise_sigma < 0 or erosion < 0:
        raise ValueError("noise_sigma and erosion must be >= 0")
    d = depth.depth.copy()
    fg = d > 0
    rng = np.random.default_rng(seed)
    if noise_sigma > 0:
        d[fg] += rng.normal(0.0, noise_sigma, size=int(fg.sum()))
        np.maximum(d, 0.0, out=d)
        fg = d > 0
    if dropout > 0:
        drop = rng.random(int(fg.sum())) < dropout
        idx = np.nonzero(fg)
        d[idx[0][drop], idx[1][drop]] = 0.0
        fg = d > 0
    if erosion > 0 and fg.any():
        keep = ndimage.binary_erosion(fg, iterations=erosion)
        d[~keep] = 0.0
    return DepthImage(d, depth.camera)


# ---------------------------------------------------------------------------
# Segmentation

class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def classical_segment(depth: DepthImage, discontinuity: float = 0.15,
                      min_region: int = 20) -> SegmentationMask:
    """Depth-discontinuity connected components as the segmentation stand-in.

    4-neighbours connect iff |depth difference| <= discontinuity; components
    smaller than min_region become background. Labels are assigned by
    descending size, then raster order of the first pixel.
    """
    if discontinuity <= 0:
        raise ValueError("discontinuity threshold must be positive")
    d = depth.depth
    h, w = d.shape
    fg = d > 0
    uf = _UnionFind(h * w)
    flat = d.ravel()

    right = fg[:, :-1] & fg[:, 1:] & (np.abs(d[:, :-1] - d[:, 1:]) <= discontinuity)
    down = fg[:-1, :] & fg[1:, :] & (np.abs(d[:-1, :] - d[1:, :]) <= discontinuity)
    rv, ru = np.nonzero(right)
    for v, u in zip(rv.tolist(), ru.tolist()):
        uf.union(v * w + u, v * w + u + 1)
    dv, du = np.nonzero(down)
    for v, u in zip(dv.tolist(), du.tolist()):
        uf.union(v * w + u, (v + 1) * w + u)

    roots = np.full(h * w, -1, dtype=np.int64)
    fg_idx = np.nonzero(fg.ravel())[0]
    for i in fg_idx.tolist():
        roots[i] = uf.find(i)
    sizes: dict[int, int] = {}
    firsts: dict[int, int] = {}
    for i in fg_idx.tolist():
        r = roots[i]
        sizes[r] = sizes.get(r, 0) + 1
        if r not in firsts:
            firsts[r] = i
    kept = [r for r, s in sizes.items() if s >= min_region]
    kept.sort(key=lambda r: (-sizes[r], firsts[r]))
    label_of = {r: i + 1 for i, r in enumerate(kept)}
    out = np.zeros(h * w, dtype=np.int64)
    for i in fg_idx.tolist():
        out[i] = label_of.get(roots[i], 0)
    del flat
    return SegmentationMask(out.reshape(h, w))


def corrupt_mask(mask: SegmentationMask, flip_fraction: float, target_label: int,
                 seed: int = 0) -> SegmentationMask:
    """Relabel round(p * n) uniformly chosen pixels of one object to background."""
    if not (0.0 <= flip_fraction <= 1.0):
        raise ValueError("flip fraction must be in [0, 1]")
    idx = np.nonzero(mask.labels.ravel() == target_label)[0]
    if idx.size == 0:
        raise ValueError("target label %d not present in mask" % target_label)
    n_flip = int(round(flip_fraction * idx.size))
    rng = np.random.default_rng(seed)
    flip = rng.choice(idx, size=n_flip, replace=False)
    out = mask.labels.copy().ravel()
    out[flip] = 0
    return SegmentationMask(out.reshape(mask.labels.shape))


def split_depth(depth: DepthImage, mask: SegmentationMask,
                num_objects: int | None = None) -> list[DepthImage]:
    """Per-object depth images: image i keeps depth only where mask == i."""
    if mask.labels.shape != depth.depth.shape:
        raise ValueError("mask and depth shapes differ")
    if num_objects is None:
        num_objects = int(mask.labels.max())
    return [
        DepthImage(np.where(mask.labels == label, depth.depth, 0.0), depth.camera)
        for label in range(1, num_objects + 1)
    ]


# ---------------------------------------------------------------------------
# Annotation images

def default_palette(num_labels: int) -> dict[int, tuple[int, int, int]]:
    """Distinct, never-black colors on a golden-angle hue wheel."""
    import colorsys

    palette = {}
    for i in range(num_labels):
        h = (i * 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.95)
        palette[i + 1] = (int(r * 255), int(g * 255), int(b * 255))
    if len({c for c in palette.values()}) != num_labels:
        raise ValueError("palette collision at %d labels" % num_labels)
    return palette


def encode_annotation(mask: SegmentationMask,
                      palette: dict[int, tuple[int, int, int]] | None = None) -> AnnotationImage:
    """Mask to RGB: background exactly black, one distinct color per label."""
    present = mask.present_labels()
    if palette is None:
        palette = default_palette(max(present) if present else 0)
    for label in present:
        if label not in palette:
            raise ValueError("palette missing label %d" % label)
    colors = [palette[l] for l in present]
    if (0, 0, 0) in colors:
        raise ValueError("palette assigns black to an object label")
    if len(set(colors)) != len(colors):
        raise ValueError("palette colors must be distinct")
    rgb = np.zeros(mask.labels.shape + (3,), dtype=np.uint8)
    for label in present:
        rgb[mask.labels == label] = palette[label]
    return AnnotationImage(rgb, dict(palette))


def decode_annotation(image: AnnotationImage) -> SegmentationMask:
    """Exact inverse of encode_annotation; unknown colors are an error."""
    packed = (
        image.rgb[..., 0].astype(np.int64) << 16
        | image.rgb[..., 1].astype(np.int64) << 8
        | image.rgb[..., 2].astype(np.int64)
    )
    lut = {(r << 16 | g << 8 | b): label for label, (r, g, b) in image.palette.items()}
    lut[0] = 0
    out = np.zeros(packed.shape, dtype=np.int64)
    for value in np.unique(packed):
        if int(value) not in lut:
            raise ValueError("color %06x not in palette" % int(value))
        out[packed == value] = lut[int(value)]
    return SegmentationMask(out)


# ---------------------------------------------------------------------------
# Netpbm I/O (16-bit PGM depth with sidecar; 8-bit PPM annotations)

def _read_pnm_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError("bad netpbm magic (wanted %s)" % magic.decode())
    vals = []
    while len(vals) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        line = line.split(b"#", 1)[0]
        vals.extend(int(tok) for tok in line.split())
    return vals[0], vals[1], vals[2]


def write_pgm16(values: np.ndarray, path: str) -> None:
    """16-bit big-endian P5 (netpbm stores multi-byte samples MSB first)."""
    arr = np.ascontiguousarray(values, dtype=np.uint16)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (arr.shape[1], arr.shape[0]))
        fh.write(arr.astype(">u2").tobytes())


def read_pgm16(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h, maxval = _read_pnm_header(fh, b"P5")
        if maxval != 65535:
            raise ValueError("expected 16-bit PGM, maxval %d" % maxval)
        data = np.frombuffer(fh.read(w * h * 2), dtype=">u2")
    return data.reshape(h, w).astype(np.uint16)


def save_depth_pgm(depth: DepthImage, path: str, scale_mm: float = 1.0) -> None:
    """Quantize depth to scale_mm steps in a 16-bit PGM plus a YAML sidecar."""
    values = np.round(depth.depth * 1000.0 / scale_mm)
    if values.max() > 65535:
        raise ValueError("depth exceeds PGM range at scale_mm=%g" % scale_mm)
    write_pgm16(values.astype(np.uint16), path)
    with open(path + ".meta", "w") as fh:
        yaml.safe_dump({"scale_mm": scale_mm, "camera": depth.camera.to_dict()}, fh)


def load_depth_pgm(path: str) -> DepthImage:
    with open(path + ".meta") as fh:
        meta = yaml.safe_load(fh)
    values = read_pgm16(path)
    depth = values.astype(np.float64) * (meta["scale_mm"] / 1000.0)
    return DepthImage(depth, CameraModel.from_dict(meta["camera"]))


def save_annotation_ppm(image: AnnotationImage, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (image.rgb.shape[1], image.rgb.shape[0]))
        fh.write(image.rgb.tobytes())
    palette = {int(k): [int(c) for c in v] for k, v in image.palette.items()}
    with open(path + ".meta", "w") as fh:
        yaml.safe_dump({"palette": palette}, fh)


def load_annotation_ppm(path: str) -> AnnotationImage:
    with open(path, "rb") as fh:
        w, h, maxval = _read_pnm_header(fh, b"P6")
        if maxval != 255:
            raise ValueError("expected 8-bit PPM")
        rgb = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8).reshape(h, w, 3)
    with open(path + ".meta") as fh:
        meta = yaml.safe_load(fh)
    palette = {int(k): tuple(int(c) for c in v) for k, v in meta["palette"].items()}
    return AnnotationImage(rgb.copy(), palette)

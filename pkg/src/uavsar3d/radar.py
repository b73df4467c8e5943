"""FMCW SAR synthesis over a 2D virtual aperture, with optional UAV
hover-vibration perturbation, and FFT heatmap formation.

Signal model: each kept scatterer k at one-way distance d contributes
a dechirped IF tone  a_k * exp(j 2 pi (f_c tau + S t tau)),  tau = 2 d / c,
with amplitude cos(incidence) / d^2. Scatterers come from casting a fan
of rays from each aperture position and keeping hits whose incidence to
the surface normal is inside the specularity cone (mirror-like mmWave
reflection; oblique surfaces return nothing).

Vibration displaces the physical positions used for synthesis while FFT
processing still assumes the ideal grid, which is what smears the
vibrating-SAR heatmaps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import yaml

from uavsar3d import kernels
from uavsar3d.geometry import RigidPose
from uavsar3d.scenes import Scene

C_LIGHT = 299792458.0


@dataclass(frozen=True)
class RadarConfig:
    carrier_hz: float = 60e9
    bandwidth_hz: float = 3.2e9
    samples_per_chirp: int = 256
    sample_rate_hz: float = 5e6
    chirp_slope_hz_s: float | None = None

    def __post_init__(self):
        if min(self.carrier_hz, self.bandwidth_hz, self.sample_rate_hz) <= 0:
            raise ValueError("radar parameters must be positive")
        if self.samples_per_chirp < 1:
            raise ValueError("need at least one sample per chirp")
        derived = self.bandwidth_hz * self.sample_rate_hz / self.samples_per_chirp
        if self.chirp_slope_hz_s is None:
            object.__setattr__(self, "chirp_slope_hz_s", derived)
        else:
            rel = abs(self.chirp_slope_hz_s - derived) / derived
            if rel > 1e-6:
                raise ValueError(
                    "inconsistent chirp slope: B != S * N_s / fs (rel err %g)" % rel
                )

    @property
    def wavelength_m(self) -> float:
        return C_LIGHT / self.carrier_hz

    @property
    def range_resolution_m(self) -> float:
        return C_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def unambiguous_range_m(self) -> float:
        return self.samples_per_chirp * self.range_resolution_m

    def fast_time(self) -> np.ndarray:
        return np.arange(self.samples_per_chirp) / self.sample_rate_hz


@dataclass(frozen=True)
class ApertureConfig:
    """W x H grid of sensor positions; columns scan azimuth, rows elevation.

    Local frame: columns along +x, rows along +z, boresight +y; `pose`
    places that frame in the world.
    """

    width: int = 64
    height: int = 16
    spacing_x_m: float = 0.0025  # lambda/2 at 60 GHz
    spacing_z_m: float = 0.0025
    pose: RigidPose = field(default_factory=RigidPose.identity)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("aperture must be at least 1x1")
        if self.spacing_x_m <= 0 or self.spacing_z_m <= 0:
            raise ValueError("spacing must be positive")

    def grid_positions(self) -> np.ndarray:
        """Ideal world positions, shape (H, W, 3)."""
        xs = (np.arange(self.width) - (self.width - 1) / 2.0) * self.spacing_x_m
        zs = (np.arange(self.height) - (self.height - 1) / 2.0) * self.spacing_z_m
        zz, xx = np.meshgrid(zs, xs, indexing="ij")
        local = np.stack([xx, np.zeros_like(xx), zz], axis=-1)
        return self.pose.apply(local.reshape(-1, 3)).reshape(self.height, self.width, 3)

    def boresight(self) -> np.ndarray:
        return self.pose.rotation @ np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class VibrationModel:
    """Gaussian position deviation of the hovering UAV, per world axis."""

    sigma_m: tuple[float, float, float] = (0.005, 0.005, 0.005)
    mode: str = "per_position"  # or "per_row": one offset per slider row
    seed: int = 0

    def __post_init__(self):
        if any(s < 0 for s in self.sigma_m):
            raise ValueError("sigma components must be >= 0")
        if self.mode not in ("per_position", "per_row"):
            raise ValueError("mode must be per_position or per_row")

    @staticmethod
    def none() -> "VibrationModel":
        return VibrationModel((0.0, 0.0, 0.0))


def perturb_aperture(aperture: ApertureConfig, vibration: VibrationModel) -> np.ndarray:
    """Actual scan positions (H, W, 3): ideal grid plus Gaussian offsets.

    per_position draws an independent offset per grid point; per_row shares
    one offset across each row (rows scanned between vibration events).
    """
    grid = aperture.grid_positions()
    rng = np.random.default_rng(vibration.seed)
    sigma = np.asarray(vibration.sigma_m, dtype=np.float64)
    if vibration.mode == "per_position":
        offsets = rng.normal(size=grid.shape) * sigma
    else:
        offsets = rng.normal(size=(aperture.height, 1, 3)) * sigma
        offsets = np.broadcast_to(offsets, grid.shape)
    return grid + offsets


@dataclass
class RawCube:
    """Complex IF samples indexed [row][column][fast-time sample]."""

    samples: np.ndarray
    positions: np.ndarray
    config: RadarConfig

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.complex128)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        h, w, ns = self.samples.shape
        if self.positions.shape != (h, w, 3):
            raise ValueError("positions shape must be (H, W, 3)")
        if ns != self.config.samples_per_chirp:
            raise ValueError("fast-time length must match the radar config")


@dataclass(frozen=True)
class FanConfig:
    """Angular ray fan cast from each aperture position (around boresight)."""

    azimuth_halfwidth_rad: float = np.deg2rad(60.0)
    elevation_halfwidth_rad: float = np.deg2rad(40.0)
    n_azimuth: int = 41
    n_elevation: int = 25
    specularity_max_rad: float = np.deg2rad(45.0)

    def directions(self, pose: RigidPose) -> np.ndarray:
        az = np.linspace(-self.azimuth_halfwidth_rad, self.azimuth_halfwidth_rad, self.n_azimuth)
        el = np.linspace(-self.elevation_halfwidth_rad, self.elevation_halfwidth_rad, self.n_elevation)
        ee, aa = np.meshgrid(el, az, indexing="ij")
        local = np.stack([
            np.sin(aa) * np.cos(ee),
            np.cos(aa) * np.cos(ee),
            np.sin(ee),
        ], axis=-1).reshape(-1, 3)
        return local @ pose.rotation.T


def if_signal(distances: np.ndarray, amplitudes: np.ndarray, config: RadarConfig) -> np.ndarray:
    """Dechirped IF samples for scatterers at the given one-way distances."""
    tau = 2.0 * np.asarray(distances, dtype=np.float64) / C_LIGHT
    t = config.fast_time()
    phase = 2.0 * np.pi * (
        config.carrier_hz * tau[:, None] + config.chirp_slope_hz_s * tau[:, None] * t[None, :]
    )
    return (np.asarray(amplitudes)[:, None] * np.exp(1j * phase)).sum(axis=0)


def point_targets_cube(positions: np.ndarray, targets: np.ndarray,
                       amplitudes: np.ndarray, config: RadarConfig) -> RawCube:
    """Cube for ideal isotropic point targets (no occlusion, no specularity)."""
    positions = np.asarray(positions, dtype=np.float64)
    h, w, _ = positions.shape
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    amplitudes = np.asarray(amplitudes, dtype=np.float64).reshape(-1)
    samples = np.zeros((h, w, config.samples_per_chirp), dtype=np.complex128)
    flat = positions.reshape(-1, 3)
    for i, pos in enumerate(flat):
        d = np.linalg.norm(targets - pos, axis=1)
        samples.reshape(-1, config.samples_per_chirp)[i] = if_signal(d, amplitudes, config)
    return RawCube(samples, positions, config)


def simulate_returns(scene: Scene | None, positions: np.ndarray, config: RadarConfig,
                     fan: FanConfig | None = None,
                     fan_pose: RigidPose | None = None) -> RawCube:
    """Ray-based IF synthesis for a scene from every aperture position.

    Rays fan out from each position; a hit survives only when its incidence
    angle to the surface normal is within the specularity cone, contributing
    a point scatterer with amplitude cos(incidence) / d^2.
    """
    positions = np.asarray(positions, dtype=np.float64)
    h, w, _ = positions.shape
    fan = fan or FanConfig()
    samples = np.zeros((h, w, config.samples_per_chirp), dtype=np.complex128)
    if scene is None or not scene.objects:
        return RawCube(samples, positions, config)

    verts, tris, _ = scene.combined_arrays()
    dirs1 = fan.directions(fan_pose if fan_pose is not None else RigidPose.identity())
    nrays = len(dirs1)
    flat_pos = positions.reshape(-1, 3)
    npos = len(flat_pos)

    origins = np.repeat(flat_pos, nrays, axis=0)
    dirs = np.tile(dirs1, (npos, 1))
    t, tri = kernels.ray_cast(origins, dirs, verts, tris)

    hit = np.isfinite(t)
    cos_inc = np.zeros(len(t))
    normals = np.zeros((len(t), 3))
    normals[hit] = _triangle_normals(verts, tris)[tri[hit]]
    cos_inc[hit] = np.abs((dirs[hit] * normals[hit]).sum(axis=1))
    keep = hit & (cos_inc >= np.cos(fan.specularity_max_rad))

    dist = np.where(keep, t, 0.0)  # fan directions are unit length
    amp = np.zeros(len(t))
    amp[keep] = cos_inc[keep] / np.square(dist[keep])

    flat_samples = samples.reshape(npos, config.samples_per_chirp)
    keep2 = keep.reshape(npos, nrays)
    dist2 = dist.reshape(npos, nrays)
    amp2 = amp.reshape(npos, nrays)
    for i in range(npos):
        sel = keep2[i]
        if sel.any():
            flat_samples[i] = if_signal(dist2[i][sel], amp2[i][sel], config)
    return RawCube(samples, positions, config)


def _triangle_normals(verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    e1 = verts[tris[:, 1]] - verts[tris[:, 0]]
    e2 = verts[tris[:, 2]] - verts[tris[:, 0]]
    n = np.cross(e1, e2)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# FFT processing

@dataclass
class HeatmapVolume:
    """Intensities indexed [range bin][azimuth bin][elevation bin].

    range_resolution_m is the native c / (2B) resolution; bin spacing along
    the range axis is range_resolution_m / pad (zero-padding refines the
    grid, not the resolution). sin_azimuth / sin_elevation give the
    direction-sine coordinate of each (fftshifted) angular bin.
    """

    intensity: np.ndarray
    range_resolution_m: float
    range_pad: int
    sin_azimuth: np.ndarray
    sin_elevation: np.ndarray

    def __post_init__(self):
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float64)
        if (self.intensity < 0).any():
            raise ValueError("intensities must be non-negative")

    @property
    def range_bin_m(self) -> float:
        return self.range_resolution_m / self.range_pad

    def range_axis_m(self) -> np.ndarray:
        return np.arange(self.intensity.shape[0]) * self.range_bin_m


def fft_complex(raw: RawCube, pad: tuple[int, int, int] = (2, 2, 2)) -> np.ndarray:
    """Complex 3D spectrum: fast-time -> range, columns -> azimuth,
    rows -> elevation; angular axes fftshifted; axes ordered (r, az, el)."""
    pr, pa, pe = pad
    h, w, ns = raw.samples.shape
    spec = np.fft.fft(raw.samples, n=ns * pr, axis=2)
    spec = np.fft.fft(spec, n=w * pa, axis=1)
    spec = np.fft.fft(spec, n=h * pe, axis=0)
    spec = np.fft.fftshift(spec, axes=(0, 1))
    return spec.transpose(2, 1, 0)


def fft_heatmap(raw: RawCube, pad: tuple[int, int, int] = (2, 2, 2)) -> HeatmapVolume:
    """Magnitude heatmap of the 3D spectrum with bin coordinate metadata."""
    spec = fft_complex(raw, pad)
    h, w, _ = raw.samples.shape
    lam = raw.config.wavelength_m
    # Two-way propagation doubles the spatial frequency, hence lambda / 2.
    dx = _mean_spacing(raw.positions[0, :, :]) if w > 1 else 1.0
    dz = _mean_spacing(raw.positions[:, 0, :]) if h > 1 else 1.0
    sin_az = np.fft.fftshift(np.fft.fftfreq(w * pad[1], d=dx)) * lam / 2.0
    sin_el = np.fft.fftshift(np.fft.fftfreq(h * pad[2], d=dz)) * lam / 2.0
    return HeatmapVolume(
        np.abs(spec),
        raw.config.range_resolution_m,
        pad[0],
        sin_az,
        sin_el,
    )


def _mean_spacing(line_positions: np.ndarray) -> float:
    deltas = np.diff(line_positions, axis=0)
    return float(np.linalg.norm(deltas, axis=1).mean())


def compare_modes(scene: Scene, aperture: ApertureConfig, config: RadarConfig,
                  vibration: VibrationModel, fan: FanConfig | None = None,
                  pad: tuple[int, int, int] = (2, 2, 2)) -> tuple[HeatmapVolume, HeatmapVolume]:
    """(normal-SAR, vibrating-SAR) heatmaps of the same scene."""
    ideal = aperture.grid_positions()
    shaken = perturb_aperture(aperture, vibration)
    normal = fft_heatmap(simulate_returns(scene, ideal, config, fan, aperture.pose), pad)
    vibrating = fft_heatmap(simulate_returns(scene, shaken, config, fan, aperture.pose), pad)
    return normal, vibrating


def peak_to_background_ratio(volume: HeatmapVolume, top_fraction: float = 0.001) -> float:
    """Mean energy of the strongest bins over the mean energy of the rest."""
    energy = np.sort(np.square(volume.intensity.ravel()))
    n_top = max(1, int(round(top_fraction * energy.size)))
    top = energy[-n_top:]
    rest = energy[:-n_top]
    denom = rest.mean() if rest.size else 1e-300
    return float(top.mean() / max(denom, 1e-300))


def max_projection(volume: HeatmapVolume, axis: int = 2) -> np.ndarray:
    """2D max-intensity projection (default over elevation -> range x azimuth)."""
    return volume.intensity.max(axis=axis)


# ---------------------------------------------------------------------------
# Heatmap file format: little-endian header + float32 body + YAML sidecar

_HEATMAP_MAGIC = b"UVHM"
_HEATMAP_VERSION = 1


def save_heatmap(volume: HeatmapVolume, path: str, config: RadarConfig | None = None) -> None:
    with open(path, "wb") as fh:
        nr, na, ne = volume.intensity.shape
        fh.write(_HEATMAP_MAGIC)
        fh.write(struct.pack("<IIIII", _HEATMAP_VERSION, nr, na, ne, volume.range_pad))
        fh.write(struct.pack("<d", volume.range_resolution_m))
        fh.write(np.asarray(volume.sin_azimuth, dtype="<f8").tobytes())
        fh.write(np.asarray(volume.sin_elevation, dtype="<f8").tobytes())
        fh.write(volume.intensity.astype("<f4").tobytes())
    meta = {
        "shape": [int(nr), int(na), int(ne)],
        "range_resolution_m": float(volume.range_resolution_m),
        "range_pad": int(volume.range_pad),
    }
    if config is not None:
        meta["radar"] = {
            "carrier_hz": config.carrier_hz,
            "bandwidth_hz": config.bandwidth_hz,
            "samples_per_chirp": config.samples_per_chirp,
            "sample_rate_hz": config.sample_rate_hz,
            "chirp_slope_hz_s": config.chirp_slope_hz_s,
        }
    with open(path + ".meta", "w") as fh:
        yaml.safe_dump(meta, fh)


def load_heatmap(path: str) -> HeatmapVolume:
    with open(path, "rb") as fh:
        if fh.read(4) != _HEATMAP_MAGIC:
            raise ValueError("not a heatmap file: %s" % path)
        version, nr, na, ne, pad = struct.unpack("<IIIII", fh.read(20))
        if version != _HEATMAP_VERSION:
            raise ValueError("unsupported heatmap version %d" % version)
        (range_res,) = struct.unpack("<d", fh.read(8))
        sin_az = np.frombuffer(fh.read(8 * na), dtype="<f8").copy()
        sin_el = np.frombuffer(fh.read(8 * ne), dtype="<f8").copy()
        body = np.frombuffer(fh.read(4 * nr * na * ne), dtype="<f4")
    return HeatmapVolume(
        body.reshape(nr, na, ne).astype(np.float64), range_res, pad, sin_az, sin_el
    )

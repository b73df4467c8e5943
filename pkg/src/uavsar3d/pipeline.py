"""End-to-end orchestration: the two reconstruction pipelines, dataset
generation, training/evaluation experiments, SAR mode comparison, and the
mask-corruption cascade study.

A single master seed fans out to per-stage seeds through SeedSequence
spawn keys (stage id plus indices), so Model 1 and Model 2 runs of the
same master seed see identical upstream heatmaps and depth images, and
whole experiments re-run bitwise identically.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from uavsar3d import metrics, radar, refine
from uavsar3d.cloud import PointCloud, downsample_to_coarse, merge, project, save_ply
from uavsar3d.geometry import RigidPose, point_mesh_distance
from uavsar3d.imaging import (
    CameraModel,
    DepthImage,
    SegmentationMask,
    classical_segment,
    corrupt_mask,
    default_palette,
    degrade,
    encode_annotation,
    look_at,
    render_depth,
    save_annotation_ppm,
    save_depth_pgm,
    split_depth,
)
from uavsar3d.scenes import Scene, SceneObject, load_scene_file

# Stage ids for seed derivation. Upstream stages (pose, vibration, degrade)
# are shared by both model variants so switching variants never perturbs them.
STAGE_POSE = 0
STAGE_VIBRATION = 1
STAGE_DEGRADE = 2
STAGE_CORRUPT = 3
STAGE_COARSE = 4
STAGE_REFINE = 5
STAGE_EVAL = 6
STAGE_SPLIT = 7
STAGE_TRAIN = 8


def derive_seed(master: int, *key: int) -> int:
    """Deterministic per-stage seed: SeedSequence(master, spawn_key=key)."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Experiment configuration

@dataclass(frozen=True)
class DegradeConfig:
    noise_sigma_m: float = 0.0
    dropout: float = 0.0
    erosion_px: int = 0


@dataclass(frozen=True)
class ViewConfig:
    n_views: int = 4
    radius_m: float = 3.0
    height_m: float = 1.2
    image_size: int = 128
    focal_px: float = 128.0

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("need at least one view")


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "model1"                 # "model1" | "model2"
    segmentation: str = "oracle"            # "oracle" | "classical" | "corrupted"
    corrupt_p: float = 0.0
    corrupt_target: int | str = "smallest"  # label, or "smallest" by pixel count
    refiner: str = "baseline"               # "baseline" | "learned"
    loss_type: str = "cd"                   # reporting tag for the refiner
    checkpoint: str | None = None           # learned joint model
    checkpoints_per_object: dict[int, str] | None = None
    views: ViewConfig = field(default_factory=ViewConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    radar_config: radar.RadarConfig = field(default_factory=radar.RadarConfig)
    aperture_width: int = 32
    aperture_height: int = 8
    vibration_sigma_m: tuple[float, float, float] = (0.005, 0.005, 0.005)
    vibration_mode: str = "per_position"
    simulate_radar: bool = True
    points_per_object: int = 4096
    master_seed: int = 0

    def __post_init__(self):
        if self.variant not in ("model1", "model2"):
            raise ValueError("variant must be model1 or model2")
        if self.segmentation not in ("oracle", "classical", "corrupted"):
            raise ValueError("unknown segmentation source %r" % self.segmentation)
        if self.refiner not in ("baseline", "learned"):
            raise ValueError("refiner must be baseline or learned")
        if not (0.0 <= self.corrupt_p <= 1.0):
            raise ValueError("corrupt_p must be in [0, 1]")

    def digest(self) -> str:
        blob = repr(self).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_yaml(path: str) -> tuple[ExperimentConfig, Scene | None]:
    """Load an experiment config file; returns (config, scene or None).

    The `scene` key may name a scene description file (relative to the
    config) or one of the built-in reference scenes.
    """
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    scene = None
    scene_ref = doc.pop("scene", None)
    if scene_ref is not None:
        from uavsar3d import scenes as scenes_mod

        builtin = {
            "two_objects": scenes_mod.two_object_scene,
            "three_objects": scenes_mod.three_object_scene,
        }
        if scene_ref in builtin:
            scene = builtin[scene_ref]()
        else:
            ref = scene_ref
            if not os.path.isabs(ref):
                ref = os.path.join(os.path.dirname(os.path.abspath(path)), ref)
            scene = load_scene_file(ref)
    kwargs = {}
    for key, value in doc.items():
        if key == "views":
            kwargs["views"] = ViewConfig(**value)
        elif key == "degrade":
            kwargs["degrade"] = DegradeConfig(**value)
        elif key == "radar_config":
            kwargs["radar_config"] = radar.RadarConfig(**value)
        elif key == "vibration_sigma_m":
            kwargs["vibration_sigma_m"] = tuple(value)
        elif key == "checkpoints_per_object":
            kwargs["checkpoints_per_object"] = {int(k): v for k, v in value.items()}
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs), scene


# ---------------------------------------------------------------------------
# Viewpoints and per-view sensing

def ring_cameras(scene: Scene, views: ViewConfig) -> list[CameraModel]:
    """n cameras on a horizontal ring, evenly spaced, aimed at the scene center."""
    lo, hi = scene.extent()
    center = (lo + hi) / 2.0
    cams = []
    for i in range(views.n_views):
        angle = 2.0 * np.pi * i / views.n_views
        eye = center + np.array([
            views.radius_m * np.cos(angle),
            views.radius_m * np.sin(angle),
            0.0,
        ])
        eye[2] = views.height_m
        pose = look_at(eye, center)
        cams.append(CameraModel.centered(views.image_size, views.image_size,
                                         views.focal_px, pose))
    return cams


def aperture_for_view(config: ExperimentConfig, eye: np.ndarray, center: np.ndarray) -> radar.ApertureConfig:
    """Aperture plane at the viewpoint, boresight toward the scene center."""
    fwd = center - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    z = up - np.dot(up, fwd) * fwd
    if np.linalg.norm(z) < 1e-9:
        z = np.array([1.0, 0.0, 0.0])
    z = z / np.linalg.norm(z)
    x = np.cross(fwd, z)
    rot = np.stack([x, fwd, z], axis=1)  # local x, y(boresight), z -> world
    return radar.ApertureConfig(
        width=config.aperture_width, height=config.aperture_height,
        pose=RigidPose(rot, eye),
    )


@dataclass
class ViewData:
    camera: CameraModel
    heatmap: radar.HeatmapVolume | None
    depth: DepthImage
    oracle_mask: SegmentationMask


@dataclass
class RunRecord:
    config_digest: str
    variant: str
    stage_outputs: dict = field(default_factory=dict)
    lost_labels: list[int] = field(default_factory=list)
    timings_s: dict = field(default_factory=dict)
    artifact_paths: dict = field(default_factory=dict)


def sense_views(scene: Scene, config: ExperimentConfig) -> list[ViewData]:
    """Shared upstream stages: radar heatmaps (optional) and the stand-in
    stage-1 depth images (oracle render + configured degradation)."""
    cams = ring_cameras(scene, config.views)
    lo, hi = scene.extent()
    center = (lo + hi) / 2.0
    out = []
    for i, cam in enumerate(cams):
        heatmap = None
        if config.simulate_radar:
            eye = cam.pose.inverse().translation
            aperture = aperture_for_view(config, eye, center)
            vib = radar.VibrationModel(
                config.vibration_sigma_m, config.vibration_mode,
                seed=derive_seed(config.master_seed, STAGE_VIBRATION, i))
            positions = radar.perturb_aperture(aperture, vib)
            raw = radar.simulate_returns(scene, positions, config.radar_config,
                                         fan_pose=aperture.pose)
            heatmap = radar.fft_heatmap(raw)
        depth, mask = render_depth(scene, cam)
        depth = degrade(depth, config.degrade.noise_sigma_m, config.degrade.dropout,
                        config.degrade.erosion_px,
                        seed=derive_seed(config.master_seed, STAGE_DEGRADE, i))
        out.append(ViewData(cam, heatmap, depth, mask))
    return out


# ---------------------------------------------------------------------------
# Segmentation sources for Model 2

def _smallest_label(views: list[ViewData], scene: Scene) -> int:
    counts = {obj.label: 0 for obj in scene.objects}
    for vd in views:
        fg = vd.depth.foreground()
        for label in counts:
            counts[label] += int(((vd.oracle_mask.labels == label) & fg).sum())
    return min(counts, key=lambda l: (counts[l], l))


def segmentation_for_view(vd: ViewData, scene: Scene, config: ExperimentConfig,
                          view_index: int, target_label: int | None) -> SegmentationMask:
    if config.segmentation == "oracle":
        return vd.oracle_mask
    if config.segmentation == "classical":
        seg = classical_segment(vd.depth)
        return _associate_components(seg, vd.oracle_mask, scene.num_objects)
    # corrupted: oracle mask with a fraction of the target's pixels flipped
    mask = vd.oracle_mask
    if config.corrupt_p > 0 and target_label is not None:
        visible = (mask.labels == target_label) & vd.depth.foreground()
        if visible.any():
            restricted = SegmentationMask(np.where(vd.depth.foreground(), mask.labels, 0))
            mask = corrupt_mask(restricted, config.corrupt_p, target_label,
                                seed=derive_seed(config.master_seed, STAGE_CORRUPT, view_index))
    return mask


def _associate_components(seg: SegmentationMask, oracle: SegmentationMask,
                          num_objects: int) -> SegmentationMask:
    """Map size-ordered components to object labels by majority oracle overlap.

    A learned semantic segmenter labels consistently across views; the
    classical stand-in has no semantics, so cross-view association uses the
    oracle mask as the correspondence authority.
    """
    out = np.zeros_like(seg.labels)
    for comp in seg.present_labels():
        sel = seg.labels == comp
        overlap = oracle.labels[sel]
        overlap = overlap[overlap > 0]
        if overlap.size:
            values, counts = np.unique(overlap, return_counts=True)
            out[sel] = values[np.argmax(counts)]
    return SegmentationMask(out)


# ---------------------------------------------------------------------------
# Refiners

def build_refiner(config: ExperimentConfig):
    if config.refiner == "baseline":
        return refine.BaselineRefiner()
    if config.checkpoint is not None:
        return refine.LearnedRefiner(refine.load_model(config.checkpoint))
    if config.checkpoints_per_object:
        models = {label: refine.load_model(path)
                  for label, path in config.checkpoints_per_object.items()}
        return refine.PerObjectRefiner(models)
    raise ValueError("learned refiner requested but no checkpoint configured")


def _refine_for_label(refiner, coarse: PointCloud, seed: int, label: int | None) -> PointCloud:
    if isinstance(refiner, refine.PerObjectRefiner):
        if label is None:
            raise ValueError("per-object refiner used in a joint pipeline")
        return refiner.for_label(label).refine(coarse, seed)
    return refiner.refine(coarse, seed)


# ---------------------------------------------------------------------------
# Model 1 / Model 2 runs

def run_model1(scene: Scene, config: ExperimentConfig,
               views: list[ViewData] | None = None) -> tuple[PointCloud, RunRecord]:
    """Joint pipeline: depth views -> merged projection -> 1024 -> 4096."""
    if config.variant != "model1":
        raise ValueError("config variant is %r, expected model1" % config.variant)
    record = RunRecord(config.digest(), "model1")
    t0 = time.perf_counter()
    views = views if views is not None else sense_views(scene, config)
    record.timings_s["sense"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    projected = [project(vd.depth) for vd in views]
    merged = merge(projected)
    if len(merged) == 0:
        raise ValueError("no foreground points in any view")
    record.stage_outputs["projection"] = merged
    coarse = downsample_to_coarse(merged, seed=derive_seed(config.master_seed, STAGE_COARSE))
    record.stage_outputs["coarse"] = coarse
    record.timings_s["coarse"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    refiner = build_refiner(config)
    out = _refine_for_label(refiner, coarse, derive_seed(config.master_seed, STAGE_REFINE), None)
    record.stage_outputs["refined"] = out
    record.timings_s["refine"] = time.perf_counter() - t0
    return out, record


def run_model2(scene: Scene, config: ExperimentConfig,
               views: list[ViewData] | None = None) -> tuple[PointCloud, RunRecord]:
    """Segmentation pipeline: per-object split, reconstruct, merge 4096 x m.

    Objects with zero foreground pixels after segmentation are reported
    LOST in the record and excluded from the merged output.
    """
    if config.variant != "model2":
        raise ValueError("config variant is %r, expected model2" % config.variant)
    record = RunRecord(config.digest(), "model2")
    t0 = time.perf_counter()
    views = views if views is not None else sense_views(scene, config)
    record.timings_s["sense"] = time.perf_counter() - t0

    target = None
    if config.segmentation == "corrupted":
        target = (config.corrupt_target if isinstance(config.corrupt_target, int)
                  else _smallest_label(views, scene))
        record.stage_outputs["corrupt_target"] = target

    t0 = time.perf_counter()
    m = scene.num_objects
    per_object_views: list[list[DepthImage]] = [[] for _ in range(m)]
    masks = []
    for i, vd in enumerate(views):
        mask = segmentation_for_view(vd, scene, config, i, target)
        masks.append(mask)
        for label_idx, dimg in enumerate(split_depth(vd.depth, mask, m)):
            per_object_views[label_idx].append(dimg)
    record.stage_outputs["masks"] = masks
    record.timings_s["segment"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    refiner = build_refiner(config)
    refined_parts = []
    per_object_coarse: dict[int, PointCloud] = {}
    for label_idx in range(m):
        label = label_idx + 1
        clouds = [project(d) for d in per_object_views[label_idx]]
        obj_merged = merge(clouds)
        if len(obj_merged) == 0:
            record.lost_labels.append(label)
            continue
        record.stage_outputs.setdefault("projection_per_object", {})[label] = obj_merged
        coarse = downsample_to_coarse(
            obj_merged, seed=derive_seed(config.master_seed, STAGE_COARSE, label))
        per_object_coarse[label] = coarse
        out = _refine_for_label(
            refiner, coarse, derive_seed(config.master_seed, STAGE_REFINE, label), label)
        refined_parts.append(PointCloud(out.points, np.full(len(out), label, dtype=np.int64)))
    record.stage_outputs["coarse_per_object"] = per_object_coarse
    record.timings_s["reconstruct"] = time.perf_counter() - t0
    if not refined_parts:
        raise ValueError("every object was lost during segmentation")
    return merge(refined_parts), record


def run_pipeline(scene: Scene, config: ExperimentConfig,
                 views: list[ViewData] | None = None) -> tuple[PointCloud, RunRecord]:
    if config.variant == "model1":
        return run_model1(scene, config, views)
    return run_model2(scene, config, views)


# ---------------------------------------------------------------------------
# Randomized scene instances and dataset generation

def randomize_scene(base: Scene, seed: int, spread_m: float = 1.0,
                    min_separation_m: float = 0.4) -> Scene:
    """Random yaw and xy placement of each object; z stays grounded.

    Placement is rejection-sampled (seeded) to keep object centers at least
    min_separation plus the two bounding radii apart.
    """
    rng = np.random.default_rng(seed)
    placed: list[tuple[np.ndarray, float]] = []
    objects = []
    for obj in sorted(base.objects, key=lambda o: o.label):
        lo, hi = obj.mesh.bounds()
        radius = float(np.linalg.norm((hi - lo)[:2]) / 2.0)
        for _ in range(200):
            yaw = rng.uniform(0.0, 2.0 * np.pi)
            xy = rng.uniform(-spread_m, spread_m, size=2)
            ok = all(
                np.linalg.norm(xy - pxy) >= min_separation_m + radius + pr
                for pxy, pr in placed
            )
            if ok:
                break
        else:
            raise RuntimeError("could not place object %r" % obj.name)
        placed.append((xy, radius))
        pose = RigidPose.from_axis_angle((0, 0, 1), yaw, (xy[0], xy[1], 0.0))
        objects.append(SceneObject(obj.mesh, pose, obj.label, obj.name))
    return Scene(objects)


def plan_dataset(config: ExperimentConfig, count: int) -> dict:
    """Manifest arithmetic without generation: count x n_views image pairs."""
    if count < 1:
        raise ValueError("count must be >= 1")
    n = config.views.n_views
    instances = []
    for idx in range(count):
        instances.append({
            "instance": idx,
            "pose_seed": derive_seed(config.master_seed, STAGE_POSE, idx),
            "views": n,
        })
    return {
        "count": count,
        "n_views": n,
        "image_pairs": count * n,
        "master_seed": config.master_seed,
        "instances": instances,
    }


def gen_dataset(scene: Scene, config: ExperimentConfig, count: int, out_dir: str) -> dict:
    """Write per-instance heatmaps, depth/annotation images, coarse clouds
    and ground-truth clouds; returns the manifest (also saved as YAML)."""
    manifest = plan_dataset(config, count)
    os.makedirs(out_dir, exist_ok=True)
    palette = default_palette(scene.num_objects)
    for entry in manifest["instances"]:
        idx = entry["instance"]
        inst_dir = os.path.join(out_dir, "inst_%04d" % idx)
        os.makedirs(inst_dir, exist_ok=True)
        inst_scene = randomize_scene(scene, entry["pose_seed"])
        inst_config = replace(config, master_seed=derive_seed(config.master_seed, STAGE_POSE, idx, 1))
        views = sense_views(inst_scene, inst_config)
        files = []
        for i, vd in enumerate(views):
            if vd.heatmap is not None:
                radar.save_heatmap(vd.heatmap, os.path.join(inst_dir, "view_%d.uvhm" % i),
                                   config.radar_config)
            restricted = SegmentationMask(
                np.where(vd.depth.foreground(), vd.oracle_mask.labels, 0))
            save_depth_pgm(vd.depth, os.path.join(inst_dir, "view_%d_depth.pgm" % i))
            save_annotation_ppm(encode_annotation(restricted, palette),
                                os.path.join(inst_dir, "view_%d_annot.ppm" % i))
            files.append("view_%d" % i)
        merged = merge([project(vd.depth) for vd in views])
        coarse = downsample_to_coarse(
            merged, seed=derive_seed(inst_config.master_seed, STAGE_COARSE))
        save_ply(coarse, os.path.join(inst_dir, "coarse.ply"))
        truth = ground_truth_for(inst_scene, inst_config)
        save_ply(truth, os.path.join(inst_dir, "gt.ply"))
        entry["dir"] = os.path.relpath(inst_dir, out_dir)
        entry["files"] = files
    with open(os.path.join(out_dir, "manifest.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return manifest


def ground_truth_for(scene: Scene, config: ExperimentConfig) -> PointCloud:
    from uavsar3d.scenes import ground_truth_cloud

    # Per-object counts keep labels; the eval protocol itself compares at
    # 4096 total via resampling in metrics.evaluate_pair.
    return ground_truth_cloud(scene, config.points_per_object,
                              derive_seed(config.master_seed, STAGE_EVAL, 0))


def eval_ground_truth(scene: Scene, config: ExperimentConfig) -> PointCloud:
    """4096-point evaluation cloud (resampled across objects when m > 1)."""
    from uavsar3d.cloud import random_sample

    full = ground_truth_for(scene, config)
    if len(full) == metrics.EVAL_SIZE:
        return full
    return random_sample(full, metrics.EVAL_SIZE,
                         derive_seed(config.master_seed, STAGE_EVAL, 1))


# ---------------------------------------------------------------------------
# Refiner training data (toy suites and real pipelines share this path)

@dataclass
class TrainPair:
    scene_id: str
    coarse: PointCloud
    truth: PointCloud
    label: int | None = None
    scene: Scene | None = None


def coarse_for_scene(scene: Scene, config: ExperimentConfig) -> PointCloud:
    """Model-1-style coarse cloud: merged multi-view projection, FPS to 1024."""
    views = sense_views(scene, config)
    merged = merge([project(vd.depth) for vd in views])
    return downsample_to_coarse(merged, seed=derive_seed(config.master_seed, STAGE_COARSE))


def build_refiner_pairs(scene_factory, count: int, config: ExperimentConfig,
                        label: int | None = 1) -> list[TrainPair]:
    """(coarse, truth) pairs over `count` generated scene instances.

    scene_factory(seed) -> Scene; per-instance seeds derive from the
    config's master seed so the whole suite is reproducible.
    """
    pairs = []
    for idx in range(count):
        scene = scene_factory(derive_seed(config.master_seed, STAGE_POSE, idx))
        inst_cfg = replace(config, master_seed=derive_seed(config.master_seed, STAGE_POSE, idx, 1))
        coarse = coarse_for_scene(scene, inst_cfg)
        truth = ground_truth_for(scene, inst_cfg)
        pairs.append(TrainPair("inst_%04d" % idx, coarse, truth, label, scene))
    return pairs


def build_per_object_pairs(scene_factory, count: int,
                           config: ExperimentConfig) -> list[TrainPair]:
    """Per-object (coarse, truth) pairs via oracle segmentation: one pair per
    visible object per instance, labeled for per-object training."""
    from uavsar3d.geometry import sample_surface

    pairs = []
    for idx in range(count):
        scene = scene_factory(derive_seed(config.master_seed, STAGE_POSE, idx))
        inst_cfg = replace(config, master_seed=derive_seed(config.master_seed, STAGE_POSE, idx, 1))
        views = sense_views(scene, inst_cfg)
        for obj in sorted(scene.objects, key=lambda o: o.label):
            clouds = []
            for vd in views:
                parts = split_depth(vd.depth, vd.oracle_mask, scene.num_objects)
                clouds.append(project(parts[obj.label - 1]))
            obj_merged = merge(clouds)
            if len(obj_merged) == 0:
                continue
            coarse = downsample_to_coarse(
                obj_merged, seed=derive_seed(inst_cfg.master_seed, STAGE_COARSE, obj.label))
            truth = sample_surface(obj.mesh, obj.pose, config.points_per_object,
                                   derive_seed(inst_cfg.master_seed, STAGE_EVAL, obj.label))
            pairs.append(TrainPair("inst_%04d" % idx, coarse, truth, obj.label, scene))
    return pairs


def split_train_test(items: list, seed: int, train_fraction: float = 0.8) -> tuple[list, list]:
    """Seeded 80/20 split by scene instance."""
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(train_fraction * len(items)))
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


# ---------------------------------------------------------------------------
# Experiment evaluation (Table-style reports)

def evaluate_configs(scenes: list[tuple[str, str, Scene]],
                     configs: list[ExperimentConfig],
                     eps: float = 0.01) -> metrics.MetricsReport:
    """Run each config over (scene_id, scene_type, scene) entries and score
    against 4096-point ground truth with the fairness protocol."""
    records = []
    for config in configs:
        for scene_id, scene_type, scene in scenes:
            views = sense_views(scene, config)
            out, _ = run_pipeline(scene, config, views)
            truth = eval_ground_truth(scene, config)
            cd, emd = metrics.evaluate_pair(
                out, truth, seed=derive_seed(config.master_seed, STAGE_EVAL, 2), eps=eps)
            records.append(metrics.ScoreRecord(
                scene_id, scene_type, config.variant, config.loss_type, cd, emd))
    return metrics.aggregate(records)


# ---------------------------------------------------------------------------
# SAR mode comparison (normal vs vibrating)

def compare_sar_modes(scene: Scene, config: ExperimentConfig, n_seeds: int = 10,
                      out_dir: str | None = None) -> dict:
    """Normal vs vibrating-SAR heatmaps of one viewpoint with peak-to-
    background energy statistics; optionally exports projection images."""
    cams = ring_cameras(scene, config.views)
    eye = cams[0].pose.inverse().translation
    lo, hi = scene.extent()
    aperture = aperture_for_view(config, eye, (lo + hi) / 2.0)
    ratios_normal, ratios_vibrating = [], []
    first_pair = None
    for s in range(n_seeds):
        vib = radar.VibrationModel(
            config.vibration_sigma_m, config.vibration_mode,
            seed=derive_seed(config.master_seed, STAGE_VIBRATION, 1000 + s))
        normal, vibrating = radar.compare_modes(
            scene, aperture, config.radar_config, vib)
        ratios_normal.append(radar.peak_to_background_ratio(normal))
        ratios_vibrating.append(radar.peak_to_background_ratio(vibrating))
        if first_pair is None:
            first_pair = (normal, vibrating)
    result = {
        "ratio_normal_mean": float(np.mean(ratios_normal)),
        "ratio_vibrating_mean": float(np.mean(ratios_vibrating)),
        "ratios_normal": ratios_normal,
        "ratios_vibrating": ratios_vibrating,
    }
    if out_dir is not None:
        from uavsar3d.imaging import write_pgm16

        os.makedirs(out_dir, exist_ok=True)
        for name, volume in (("normal", first_pair[0]), ("vibrating", first_pair[1])):
            img = radar.max_projection(volume)
            peak = img.max() or 1.0
            write_pgm16(np.round(img / peak * 65535).astype(np.uint16),
                        os.path.join(out_dir, "sar_%s.pgm" % name))
        result["exports"] = [os.path.join(out_dir, "sar_normal.pgm"),
                             os.path.join(out_dir, "sar_vibrating.pgm")]
    return result


# ---------------------------------------------------------------------------
# Mask-corruption cascade study

OFF_SURFACE_THRESHOLD_M = 5e-4  # padding jitter (1 mm sigma) lands beyond this


def corruption_study(scene: Scene, config: ExperimentConfig,
                     p_values: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0),
                     n_seeds: int = 5) -> dict:
    """Mean off-surface fraction of the targeted object's coarse cloud as a
    function of the corruption fraction p; p where the object vanishes is
    reported LOST (off-surface fraction 1 by convention).

    Upstream stages depend only on the per-seed master, so each seed's
    views are sensed once and reused across p.
    """
    per_p_fractions: list[list[float]] = [[] for _ in p_values]
    per_p_lost = [0 for _ in p_values]
    for s in range(n_seeds):
        seed_master = derive_seed(config.master_seed, STAGE_EVAL, 3, s)
        base_cfg = replace(config, variant="model2", segmentation="corrupted",
                           refiner="baseline", master_seed=seed_master)
        views = sense_views(scene, base_cfg)
        for pi, p in enumerate(p_values):
            cfg = replace(base_cfg, corrupt_p=p)
            try:
                _, record = run_model2(scene, cfg, views)
            except ValueError:
                record = None
            if record is None:
                per_p_lost[pi] += 1
                per_p_fractions[pi].append(1.0)
                continue
            target = record.stage_outputs.get(
                "corrupt_target", _smallest_label(views, scene))
            if target in record.lost_labels:
                per_p_lost[pi] += 1
                per_p_fractions[pi].append(1.0)
                continue
            coarse = record.stage_outputs["coarse_per_object"][target]
            obj = scene.object_by_label(target)
            dists = point_mesh_distance(coarse.points, obj.mesh, obj.pose)
            per_p_fractions[pi].append(float((dists > OFF_SURFACE_THRESHOLD_M).mean()))
    return {
        "p_values": list(p_values),
        "fractions": [float(np.mean(f)) for f in per_p_fractions],
        "lost": per_p_lost,
    }

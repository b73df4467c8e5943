"""Command-line interface.

Subcommands: simulate, dataset, train, eval, compare-sar,
corruption-study, export. Exit codes: 0 success, 1 validation error,
2 stage failure. The master seed comes from --seed, the UAVSAR3D_SEED
environment variable, or the experiment config, in that order.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np
import yaml


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


class ValidationError(ValueError):
    pass


def _load_config(args):
    from uavsar3d import pipeline

    try:
        if args.config:
            if not os.path.exists(args.config):
                raise ValidationError("config file not found: %s" % args.config)
            config, scene = pipeline.config_from_yaml(args.config)
        else:
            config, scene = pipeline.ExperimentConfig(), None
        seed = args.seed
        if seed is None:
            env = os.environ.get("UAVSAR3D_SEED")
            seed = int(env) if env else None
        if seed is not None:
            config = replace(config, master_seed=seed)
    except (ValueError, KeyError, TypeError, yaml.YAMLError) as exc:
        raise ValidationError(str(exc)) from exc
    if scene is None:
        from uavsar3d.scenes import two_object_scene

        scene = two_object_scene()
    return config, scene


def _cmd_simulate(args):
    from uavsar3d import pipeline
    from uavsar3d.cloud import save_ply

    config, scene = _load_config(args)
    out_cloud, record = pipeline.run_pipeline(scene, config)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "reconstruction.ply")
    save_ply(out_cloud, path)
    summary = {
        "variant": record.variant,
        "points": len(out_cloud),
        "lost_labels": record.lost_labels,
        "timings_s": {k: round(v, 4) for k, v in record.timings_s.items()},
        "output": path,
    }
    with open(os.path.join(args.out, "run.yaml"), "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    print(yaml.safe_dump(summary, sort_keys=False).strip())


def _cmd_dataset(args):
    from uavsar3d import pipeline

    config, scene = _load_config(args)
    if args.plan_only:
        manifest = pipeline.plan_dataset(config, args.count)
        print("instances=%d views=%d image_pairs=%d" % (
            manifest["count"], manifest["n_views"], manifest["image_pairs"]))
        return
    manifest = pipeline.gen_dataset(scene, config, args.count, args.out)
    print("wrote %d instances (%d image pairs) to %s" % (
        manifest["count"], manifest["image_pairs"], args.out))


def _cmd_train(args):
    from uavsar3d import pipeline, refine
    from uavsar3d.scenes import random_box_scene

    config, scene = _load_config(args)
    if args.suite == "boxes":
        factory = random_box_scene
    else:
        factory = lambda seed: pipeline.randomize_scene(scene, seed)
    tcfg = refine.TrainingConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
        loss_type=args.loss, seed=config.master_seed)
    if args.per_object:
        pairs = pipeline.build_per_object_pairs(factory, args.count, config)
        models, logs = refine.train_per_object(pairs, tcfg)
        os.makedirs(args.out, exist_ok=True)
        for label, model in models.items():
            path = os.path.join(args.out, "object_%d.ckpt" % label)
            refine.save_model(model, path)
            logs[label].save_csv(path + ".log.csv")
            print("label %d -> %s (final loss %.5f)" % (
                label, path, logs[label].epoch_losses[-1]))
    else:
        pairs = pipeline.build_refiner_pairs(factory, args.count, config)
        model, log = refine.train_joint(pairs, tcfg)
        os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
        refine.save_model(model, args.out)
        log.save_csv(args.out + ".log.csv")
        print("model -> %s (final loss %.5f)" % (args.out, log.epoch_losses[-1]))


def _cmd_eval(args):
    from uavsar3d import metrics, pipeline

    config, scene = _load_config(args)
    if args.checkpoint:
        config = replace(config, refiner="learned", checkpoint=args.checkpoint)
    if config.refiner == "learned" and not (config.checkpoint or config.checkpoints_per_object):
        raise ValidationError("learned refiner requested but no checkpoint given")
    scene_type = "%d objects" % scene.num_objects
    scenes = []
    for i in range(args.instances):
        inst = pipeline.randomize_scene(
            scene, pipeline.derive_seed(config.master_seed, pipeline.STAGE_POSE, 9000 + i))
        scenes.append(("eval_%04d" % i, scene_type, inst))
    report = pipeline.evaluate_configs(scenes, [config])
    metrics.save_report(report, args.out)
    print(metrics.render_table(report))


def _cmd_compare_sar(args):
    from uavsar3d import pipeline

    config, scene = _load_config(args)
    result = pipeline.compare_sar_modes(scene, config, n_seeds=args.seeds, out_dir=args.out)
    print("peak-to-background ratio: normal %.2f vibrating %.2f (over %d seeds)" % (
        result["ratio_normal_mean"], result["ratio_vibrating_mean"], args.seeds))
    if "exports" in result:
        for path in result["exports"]:
            print("wrote", path)


def _cmd_corruption_study(args):
    from uavsar3d import pipeline

    config, scene = _load_config(args)
    result = pipeline.corruption_study(scene, config, n_seeds=args.seeds)
    for p, frac, lost in zip(result["p_values"], result["fractions"], result["lost"]):
        print("p=%.2f off-surface fraction %.3f lost %d/%d" % (p, frac, lost, args.seeds))
    if args.out:
        with open(args.out, "w") as fh:
            yaml.safe_dump(result, fh, sort_keys=False)
        print("wrote", args.out)


def _cmd_export(args):
    from uavsar3d import radar
    from uavsar3d.cloud import load_ply, load_xyz, save_ply, save_xyz
    from uavsar3d.imaging import load_depth_pgm, write_pgm16

    src, dst = args.input, args.output
    if not os.path.exists(src):
        raise ValidationError("input not found: %s" % src)
    s_ext = os.path.splitext(src)[1].lower()
    d_ext = os.path.splitext(dst)[1].lower()
    if s_ext in (".ply", ".xyz") and d_ext in (".ply", ".xyz"):
        cloud = load_ply(src) if s_ext == ".ply" else load_xyz(src)
        if d_ext == ".ply":
            save_ply(cloud, dst, binary=not args.ascii)
        else:
            save_xyz(cloud, dst)
    elif s_ext == ".uvhm" and d_ext == ".pgm":
        volume = radar.load_heatmap(src)
        img = radar.max_projection(volume)
        peak = float(img.max()) or 1.0
        write_pgm16(np.round(img / peak * 65535).astype(np.uint16), dst)
    elif s_ext == ".pgm" and d_ext in (".ply", ".xyz"):
        from uavsar3d.cloud import project

        cloud = project(load_depth_pgm(src))
        if d_ext == ".ply":
            save_ply(cloud, dst, binary=not args.ascii)
        else:
            save_xyz(cloud, dst)
    else:
        raise ValidationError("unsupported conversion %s -> %s" % (s_ext, d_ext))
    print("wrote", dst)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uavsar3d", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the configured pipeline on one scene")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("dataset", help="generate a randomized-instance dataset")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--count", type=int, required=True, help="scene instances")
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--plan-only", action="store_true",
                   help="print the manifest arithmetic without writing")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train the learned refiner")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--count", type=int, default=64, help="training scene instances")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--loss", choices=("cd", "emd"), default="cd")
    p.add_argument("--suite", choices=("scene", "boxes"), default="scene",
                   help="randomized config scene instances, or the box toy suite")
    p.add_argument("--per-object", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path (or directory with --per-object)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate the configured pipeline")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--instances", type=int, default=4)
    p.add_argument("--checkpoint", help="learned refiner checkpoint")
    p.add_argument("--out", required=True, help="report base path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare-sar", help="normal vs vibrating SAR comparison")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", help="directory for projection image exports")
    p.set_defaults(func=_cmd_compare_sar)

    p = sub.add_parser("corruption-study", help="segmentation-corruption cascade study")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", help="YAML results path")
    p.set_defaults(func=_cmd_corruption_study)

    p = sub.add_parser("export", help="convert artifacts between formats")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print("validation error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # stage failure
        print("stage failure: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

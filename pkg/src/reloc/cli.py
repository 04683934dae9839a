"""Command-line surface: configuration, orchestration, and reports.

Subcommands: synth, train-confidence, localize, ablate, validate. Every
subcommand is a pure function of (config file, dataset bytes, seed):
given the same inputs it writes byte-identical primary outputs. The one
unavoidably non-reproducible quantity, wall-clock timing, goes into a
separate timings.json sidecar so the metric files stay comparable.
"""

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import confidence as conf_mod
from . import dataio, evaluation, geometry, pipeline, report, synth
from .errors import (AllHypothesesFailed, ConfigError, DataError, NumericError,
                     RelocError)
from .geometry import CameraIntrinsics

log = logging.getLogger("reloc")

DEFAULT_CAMERA = {"fx": 45.0, "fy": 45.0, "cx": 24.0, "cy": 18.0,
                  "width": 48, "height": 36}


def _check_keys(d, allowed, context):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(
            f"{context}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def _section(doc, name, defaults):
    sub = doc.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    _check_keys(sub, defaults, f"config section {name!r}")
    merged = dict(defaults)
    merged.update(sub)
    return merged


@dataclasses.dataclass
class RunConfig:
    seed: int
    camera: CameraIntrinsics
    scene: synth.SceneSpec
    noise: synth.NoiseSpec
    n_frames: int
    radius_scale: float
    height_scale: float
    pipeline: pipeline.PipelineConfig
    training: conf_mod.TrainConfig
    holdout_frames: int
    tukey_c: float | None
    dataset: str | None
    model: str | None


def load_run_config(path, seed_override=None):
    """Parse and validate the JSON run configuration.

    Unknown keys anywhere in the document are rejected so typos cannot
    silently fall back to defaults.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _check_keys(doc, ("seed", "camera", "scene", "noise", "trajectory",
                      "pipeline", "training", "tukey", "paths"), "config")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    if seed_override is not None:
        seed = seed_override

    cam = _section(doc, "camera", DEFAULT_CAMERA)
    scn = _section(doc, "scene", {"box_min": [0.0, 0.0, 0.0],
                                  "box_max": [1.0, 1.0, 0.6],
                                  "grid_res": 8, "amplitude": 0.35,
                                  "seed": seed})
    noi = _section(doc, "noise", synth.NoiseSpec().to_dict())
    tra = _section(doc, "trajectory", {"n_frames": 50, "radius_scale": 0.5,
                                       "height_scale": 0.45})
    pip = _section(doc, "pipeline", {"n_k": 500, "keep_fraction": 0.10,
                                     "h_p": 256, "refine_iters": 8,
                                     "solver": "kabsch", "accumulate": True})
    trn = _section(doc, "training", {"epochs": 600, "batch_frames": 20,
                                     "learning_rate": 2e-3,
                                     "encoder_widths": [32, 64],
                                     "head_widths": [32],
                                     "holdout_frames": 5})
    tuk = _section(doc, "tukey", {"c": None})
    paths = _section(doc, "paths", {"dataset": None, "model": None})

    try:
        config = RunConfig(
            seed=seed,
            camera=CameraIntrinsics.from_dict(cam),
            scene=synth.SceneSpec.from_dict(scn),
            noise=synth.NoiseSpec.from_dict(noi),
            n_frames=int(tra["n_frames"]),
            radius_scale=float(tra["radius_scale"]),
            height_scale=float(tra["height_scale"]),
            pipeline=pipeline.PipelineConfig(
                n_k=int(pip["n_k"]), keep_fraction=float(pip["keep_fraction"]),
                h_p=int(pip["h_p"]), refine_iters=int(pip["refine_iters"]),
                solver=pip["solver"], seed=seed,
                accumulate=bool(pip["accumulate"])),
            training=conf_mod.TrainConfig(
                epochs=int(trn["epochs"]), batch_frames=int(trn["batch_frames"]),
                learning_rate=float(trn["learning_rate"]), seed=seed,
                encoder_widths=tuple(trn["encoder_widths"]),
                head_widths=tuple(trn["head_widths"])),
            holdout_frames=int(trn["holdout_frames"]),
            tukey_c=tuk["c"],
            dataset=paths["dataset"],
            model=paths["model"],
        )
    except (RelocError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    if config.n_frames < 1:
        raise ConfigError("trajectory.n_frames must be at least 1")
    return config


def _config_echo(config):
    return {
        "seed": config.seed,
        "camera": config.camera.to_dict(),
        "scene": config.scene.to_dict(),
        "noise": config.noise.to_dict(),
        "trajectory": {"n_frames": config.n_frames,
                       "radius_scale": config.radius_scale,
                       "height_scale": config.height_scale},
        "pipeline": {"n_k": config.pipeline.n_k,
                     "keep_fraction": config.pipeline.keep_fraction,
                     "h_p": config.pipeline.h_p,
                     "refine_iters": config.pipeline.refine_iters,
                     "solver": config.pipeline.solver,
                     "accumulate": config.pipeline.accumulate},
    }


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _require_dataset(config, args):
    path = getattr(args, "dataset", None) or config.dataset
    if path is None:
        raise ConfigError("no dataset path: set paths.dataset in the config")
    return dataio.load_dataset(path)


def _out_dir(args):
    if args.out is None:
        raise ConfigError("--out is required for this subcommand")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(config, args):
    scene = synth.generate_scene(config.scene)
    poses = synth.generate_trajectory(
        scene, config.n_frames, seed=config.seed,
        radius_scale=config.radius_scale, height_scale=config.height_scale)
    frames = [synth.render_frame(scene, pose, config.camera, config.noise,
                                 seed=(config.seed, 2, i))
              for i, pose in enumerate(poses)]
    out = _out_dir(args)
    dataio.write_dataset(out, config.scene, config.noise, config.camera, frames)
    fractions = [evaluation.inlier_fraction(
        f.pred_coords.coords[f.pred_coords.mask],
        f.gt_coords.coords[f.gt_coords.mask]) for f in frames]
    print(f"wrote {len(frames)} frames to {out}")
    print(f"measured raw inlier fraction: {np.mean(fractions):.4f}")
    return 0


def _frame_samples(sf, config, rng):
    frame = pipeline.frame_from_synthetic(sf)
    n = min(config.pipeline.n_k, frame.n)
    pick = rng.choice(frame.n, size=n, replace=False)
    targets = conf_mod.delta_target(frame.gt_coords[pick], frame.coords[pick])
    return conf_mod.FrameSamples(frame.pixels[pick], frame.coords[pick], targets)


def cmd_train_confidence(config, args):
    scene_spec, _, K, sfs = _require_dataset(config, args)
    holdout = min(config.holdout_frames, max(len(sfs) - 1, 0))
    split = len(sfs) - holdout
    rng = np.random.default_rng((config.seed, 3))
    samples = [_frame_samples(sf, config, rng) for sf in sfs[:split]]
    norm = conf_mod.Normalization(
        scene_center=np.asarray(scene_spec.center),
        scene_half_diameter=scene_spec.diameter / 2,
        width=K.width, height=K.height)
    model, history = conf_mod.train_confidence(samples, norm, config.training)
    out = _out_dir(args)
    conf_mod.save_model(out / "confidence.rlnn", model)
    report.training_curve(history, out / "training_loss.png")
    print(f"final training loss: {history[-1]:.6f}")
    if holdout > 0:
        confs, labels = [], []
        for sf in sfs[split:]:
            frame = pipeline.frame_from_synthetic(sf)
            confs.append(conf_mod.predict_confidences(model, frame.pixels,
                                                      frame.coords))
            err = np.linalg.norm(frame.coords - frame.gt_coords, axis=1)
            labels.append(err < evaluation.INLIER_THRESHOLD_M)
        curve = evaluation.roc(np.concatenate(confs), np.concatenate(labels))
        report.roc_figure(curve, out / "roc.png")
        _write_json(out / "training_summary.json", {
            "final_loss": history[-1], "holdout_auc": curve.auc,
            "epochs": config.training.epochs, "seed": config.seed})
        print(f"held-out AUC: {curve.auc:.4f}")
    return 0


def cmd_localize(config, args):
    _, _, K, sfs = _require_dataset(config, args)
    if config.model is not None:
        scorer = pipeline.ModelScorer(conf_mod.load_model(config.model))
    else:
        # without a trained model fall back to ground-truth confidences,
        # which the synthetic datasets always carry
        scorer = pipeline.OracleScorer()
    out = _out_dir(args)
    rows = []
    timings = []
    estimates, gt_poses = [], []
    for i, sf in enumerate(sfs):
        frame = pipeline.frame_from_synthetic(sf)
        cfg = dataclasses.replace(config.pipeline, seed=config.seed + i)
        row = {"frame": i,
               "raw_inlier_fraction": evaluation.inlier_fraction(
                   frame.coords, frame.gt_coords)}
        try:
            pose, diag = pipeline.localize(frame, scorer, cfg)
        except AllHypothesesFailed as exc:
            log.warning("frame %d: %s", i, exc)
            row.update({"status": "failed", "rotation_error_deg": "",
                        "translation_error_m": "",
                        "kept_inlier_fraction": ""})
            rows.append(row)
            continue
        row.update({
            "status": "ok",
            "rotation_error_deg": repr(geometry.rotation_error_deg(pose, sf.pose)),
            "translation_error_m": repr(geometry.translation_error_m(pose, sf.pose)),
            "kept_inlier_fraction": repr(diag["kept_inlier_fraction"]),
        })
        rows.append(row)
        timings.append({"frame": i, **diag["timing"]})
        estimates.append(pose)
        gt_poses.append(sf.pose)
    fields = ["frame", "status", "rotation_error_deg", "translation_error_m",
              "kept_inlier_fraction", "raw_inlier_fraction"]
    with open(out / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    summary = {"config": _config_echo(config), "seed": config.seed,
               "n_frames": len(sfs), "n_failed": len(sfs) - len(estimates)}
    if estimates:
        metrics = evaluation.pose_metrics(estimates, gt_poses)
        summary.update({
            "median_rotation_deg": metrics.median_rotation_deg,
            "median_translation_m": metrics.median_translation_m,
            "accuracy_5deg_5cm": metrics.accuracy,
        })
        report.error_histograms(metrics.rotation_errors_deg,
                                metrics.translation_errors_m,
                                out / "errors.png")
    _write_json(out / "summary.json", summary)
    sampling = sum(t["sampling_s"] for t in timings)
    refinement = sum(t["refinement_s"] for t in timings)
    _write_json(out / "timings.json", {
        "per_frame": timings, "total_sampling_s": sampling,
        "total_refinement_s": refinement})
    if estimates:
        print(f"median errors: {summary['median_rotation_deg']:.3f} deg / "
              f"{summary['median_translation_m']:.4f} m, "
              f"accuracy {summary['accuracy_5deg_5cm']:.2f}")
    print(f"timing: sampling {sampling:.2f} s, refinement {refinement:.2f} s")
    return 0


def cmd_ablate(config, args):
    _, _, K, sfs = _require_dataset(config, args)
    model = None
    variants = ("random", "smoothed", "oracle_confidence")
    if config.model is not None:
        model = conf_mod.load_model(config.model)
        variants = evaluation.VARIANTS
    cfg = dataclasses.replace(config.pipeline, seed=config.seed)
    rows = evaluation.run_ablation(sfs, cfg, model=model, variants=variants)
    out = _out_dir(args)
    fields = [f.name for f in dataclasses.fields(evaluation.AblationRow)]
    with open(out / "ablation.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([getattr(row, name) for name in fields])
    lines = [f"{'variant':<22}{'h_p':>5}{'rot med (deg)':>15}"
             f"{'trans med (m)':>15}{'acc':>7}{'kept inl':>10}{'raw inl':>9}"]
    for row in rows:
        lines.append(f"{row.variant:<22}{row.h_p:>5}"
                     f"{row.median_rotation_deg:>15.4f}"
                     f"{row.median_translation_m:>15.4f}"
                     f"{row.accuracy:>7.2f}"
                     f"{row.mean_kept_inlier_fraction:>10.3f}"
                     f"{row.mean_raw_inlier_fraction:>9.3f}")
    if rows and rows[0].mean_raw_inlier_fraction > 0.99:
        lines.append("note: raw predictions are nearly noise-free; variant "
                     "ordering is degenerate and not meaningful")
    table = "\n".join(lines) + "\n"
    (out / "ablation.txt").write_text(table)
    report.ablation_figure(rows, out / "ablation.png")
    print(table, end="")
    return 0


def cmd_validate(config, args):
    path = getattr(args, "dataset", None) or config.dataset
    if path is None:
        raise ConfigError("no dataset path: set paths.dataset in the config")
    problems = dataio.validate_dataset(path)
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        raise DataError(f"dataset {path} failed validation "
                        f"({len(problems)} problem(s))")
    print(f"dataset {path} is valid")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train-confidence": cmd_train_confidence,
    "localize": cmd_localize,
    "ablate": cmd_ablate,
    "validate": cmd_validate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reloc",
        description="Camera re-localization from noisy scene-coordinate "
                    "predictions: synthetic data, confidence training, "
                    "pose estimation, and ablations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker count (currently runs sequentially)")
    return parser


def _setup_logging():
    level = os.environ.get("RELOC_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"RELOC_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        config = load_run_config(args.config, seed_override=args.seed)
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

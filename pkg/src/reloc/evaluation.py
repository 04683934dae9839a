"""Pose metrics, inlier statistics, ROC curves, and the ablation harness.

Median convention: lower-middle order statistic for even counts, so
results are reproducible across numeric stacks. Pose accuracy uses the
JOINT 5 degree / 5 cm threshold. Inlier counting is strict (< 0.1 m).
"""

from dataclasses import dataclass, field

import numpy as np

from . import confidence as conf_mod
from . import geometry, losses, pipeline, solvers
from .errors import (AllHypothesesFailed, DegenerateLabels, EmptyInput,
                     FailedHypothesis, LengthMismatch)

INLIER_THRESHOLD_M = 0.1
ROTATION_THRESHOLD_DEG = 5.0
TRANSLATION_THRESHOLD_M = 0.05


def median_low(values):
    """Lower-middle order statistic."""
    v = np.sort(np.asarray(values, float))
    if v.size == 0:
        raise EmptyInput("median of empty sequence")
    return float(v[(v.size - 1) // 2])


@dataclass
class PoseMetrics:
    median_rotation_deg: float
    median_translation_m: float
    accuracy: float
    rotation_errors_deg: list
    translation_errors_m: list


def pose_metrics(estimates, ground_truth):
    if len(estimates) != len(ground_truth):
        raise LengthMismatch("estimate and ground-truth counts differ")
    if not estimates:
        raise EmptyInput("no poses to evaluate")
    rot = [geometry.rotation_error_deg(e, g) for e, g in zip(estimates, ground_truth)]
    trans = [geometry.translation_error_m(e, g) for e, g in zip(estimates, ground_truth)]
    correct = [r < ROTATION_THRESHOLD_DEG and t < TRANSLATION_THRESHOLD_M
               for r, t in zip(rot, trans)]
    return PoseMetrics(
        median_rotation_deg=median_low(rot),
        median_translation_m=median_low(trans),
        accuracy=float(np.mean(correct)),
        rotation_errors_deg=rot,
        translation_errors_m=trans,
    )


def inlier_fraction(pred, gt, t_inlier=INLIER_THRESHOLD_M):
    """Fraction of correspondences with error strictly below t_inlier."""
    pred = np.asarray(pred, float).reshape(-1, 3)
    gt = np.asarray(gt, float).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise LengthMismatch("prediction/ground-truth shape mismatch")
    err = np.linalg.norm(pred - gt, axis=1)
    return float(np.mean(err < t_inlier))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc(confidences, labels):
    """Threshold sweep over the distinct confidence values; trapezoidal AUC."""
    confidences = np.asarray(confidences, float)
    labels = np.asarray(labels, bool)
    if confidences.shape != labels.shape:
        raise LengthMismatch("confidence/label length mismatch")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative label")
    thresholds = np.concatenate([[np.inf], np.unique(confidences)[::-1], [-np.inf]])
    fpr, tpr = [], []
    for t in thresholds:
        predicted = confidences >= t
        tpr.append(np.count_nonzero(predicted & labels) / n_pos)
        fpr.append(np.count_nonzero(predicted & ~labels) / n_neg)
    fpr = np.asarray(fpr)
    tpr = np.asarray(tpr)
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, auc=auc)


def _consistency_inliers(frame, pose, indices, cfg):
    """Pose-consistency residuals, no ground truth: compare the predicted
    scene coordinate against the pose-transferred camera point."""
    if cfg.solver == "kabsch":
        cam = geometry.backproject(frame.intrinsics, frame.pixels[indices],
                                   frame.depths[indices])
        err = np.linalg.norm(geometry.camera_to_scene(pose, cam)
                             - frame.coords[indices], axis=1)
        return err < INLIER_THRESHOLD_M
    err = solvers.reprojection_error_px(pose, frame.pixels[indices],
                                        frame.coords[indices], frame.intrinsics)
    return err < 10.0


def random_baseline_localize(frame, cfg):
    """Plain random-sampling baseline: each hypothesis solves on its full
    n_k-point sample; with several hypotheses the one with the highest
    pose-consistency inlier count wins. No confidence filtering and no
    refinement, mirroring the random-sampling rows of the ablation."""
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(cfg.seed).spawn(cfg.h_p)]
    best = None
    best_count = -1
    for stream in streams:
        sampled = stream.choice(frame.n, size=cfg.n_k, replace=False)
        try:
            pose = pipeline._solve(frame, sampled, cfg)
        except FailedHypothesis:
            continue
        count = int(_consistency_inliers(frame, pose, sampled, cfg).sum())
        if count > best_count:
            best_count = count
            best = pose
    if best is None:
        raise AllHypothesesFailed("every baseline hypothesis failed")
    return best


def smooth_coordinates(frame_sf, spec=losses.NeighborhoodSpec(), blend=0.5):
    """One depth-weighted Laplacian smoothing pass over the predicted map."""
    coords = frame_sf.pred_coords.coords
    depths = frame_sf.depths
    out = coords.copy()
    h, w = depths.shape
    valid = frame_sf.pred_coords.mask & np.isfinite(depths)
    for r in range(h):
        for c in range(w):
            if not valid[r, c]:
                continue
            try:
                weights, neighbors = losses.laplacian_weights(depths, (r, c), spec)
            except losses.EmptyNeighborhood:
                continue
            keep = [k for k, j in enumerate(neighbors) if valid[j]]
            if not keep:
                continue
            wsub = np.array([weights[k] for k in keep])
            wsub /= wsub.sum()
            avg = sum(wk * coords[neighbors[k]] for wk, k in zip(wsub, keep))
            out[r, c] = (1 - blend) * coords[r, c] + blend * avg
    result = frame_sf.pred_coords.__class__(out, frame_sf.pred_coords.mask)
    return result


VARIANTS = ("random", "smoothed", "oracle_confidence", "trained_confidence")


@dataclass
class AblationRow:
    variant: str
    h_p: int
    median_rotation_deg: float
    median_translation_m: float
    accuracy: float
    mean_kept_inlier_fraction: float
    mean_raw_inlier_fraction: float


def run_ablation(synthetic_frames, cfg, model=None, variants=VARIANTS,
                 h_p_values=(1, 256)):
    """Table-style comparison of sampling strategies at each hypothesis count.

    Variants: plain random sampling scored by consistency inliers, random
    sampling on a smoothed coordinate map, and the confidence pipeline with
    oracle or trained confidences. Returns a list of AblationRow.
    """
    import dataclasses

    frames = [pipeline.frame_from_synthetic(sf) for sf in synthetic_frames]
    gt_poses = [sf.pose for sf in synthetic_frames]
    raw_inliers = [inlier_fraction(f.coords, f.gt_coords) for f in frames]
    smoothed_frames = None
    rows = []
    for variant in variants:
        if variant == "trained_confidence" and model is None:
            continue
        for h_p in h_p_values:
            estimates = []
            kept_fractions = []
            for i, frame in enumerate(frames):
                run_cfg = dataclasses.replace(cfg, h_p=h_p, seed=cfg.seed + i)
                if variant == "random":
                    estimates.append(random_baseline_localize(frame, run_cfg))
                    kept_fractions.append(raw_inliers[i])
                elif variant == "smoothed":
                    if smoothed_frames is None:
                        smoothed_frames = [
                            dataclasses.replace(sf, pred_coords=smooth_coordinates(sf))
                            for sf in synthetic_frames]
                    sframe = pipeline.frame_from_synthetic(smoothed_frames[i])
                    estimates.append(random_baseline_localize(sframe, run_cfg))
                    kept_fractions.append(
                        inlier_fraction(sframe.coords, sframe.gt_coords))
                else:
                    scorer = (pipeline.OracleScorer()
                              if variant == "oracle_confidence"
                              else pipeline.ModelScorer(model))
                    pose, diag = pipeline.localize(frame, scorer, run_cfg)
                    estimates.append(pose)
                    kept_fractions.append(diag.get("kept_inlier_fraction", np.nan))
            metrics = pose_metrics(estimates, gt_poses)
            rows.append(AblationRow(
                variant=variant,
                h_p=h_p,
                median_rotation_deg=metrics.median_rotation_deg,
                median_translation_m=metrics.median_translation_m,
                accuracy=metrics.accuracy,
                mean_kept_inlier_fraction=float(np.nanmean(kept_fractions)),
                mean_raw_inlier_fraction=float(np.mean(raw_inliers)),
            ))
    return rows

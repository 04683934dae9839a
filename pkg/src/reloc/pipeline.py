"""Confidence-scored hypothesis sampling, selection, and refinement.

Each hypothesis samples n_k correspondences, keeps the top keep_fraction
by confidence, solves a pose (Kabsch or PnP), and is scored by the mean
confidence of the kept points. The best of h_p hypotheses is refined by
repeatedly sampling fresh points and accumulating their most confident
subset into the support set. Everything is deterministic per seed; each
hypothesis draws from its own child rng stream.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import confidence as conf_mod
from . import geometry, solvers
from .errors import (AllHypothesesFailed, BehindCamera, DegenerateConfiguration,
                     FailedHypothesis, ShapeMismatch, TooFewCorrespondences,
                     TooFewPoints)


@dataclass(frozen=True)
class PipelineConfig:
    n_k: int = 500
    keep_fraction: float = 0.10
    h_p: int = 256
    refine_iters: int = 8
    solver: str = "kabsch"       # "kabsch" or "pnp"
    seed: int = 0
    accumulate: bool = True      # refinement grows the support set

    def __post_init__(self):
        if not (0 < self.keep_fraction <= 1):
            raise ShapeMismatch("keep_fraction must be in (0, 1]")
        if self.h_p < 1:
            raise ShapeMismatch("need at least one hypothesis")
        if self.solver not in ("kabsch", "pnp"):
            raise ShapeMismatch(f"unknown solver {self.solver!r}")
        if self.n_best < (3 if self.solver == "kabsch" else 6):
            raise ShapeMismatch("kept set smaller than the solver minimum")

    @property
    def n_best(self):
        return max(1, int(round(self.n_k * self.keep_fraction)))


@dataclass
class Frame:
    """Flat correspondence arrays for one image."""

    pixels: np.ndarray                 # (m, 2)
    coords: np.ndarray                 # (m, 3) predicted scene coordinates
    intrinsics: object
    depths: np.ndarray = None          # (m,) camera depths, required for kabsch
    gt_coords: np.ndarray = None       # (m, 3) optional ground truth
    gt_pose: object = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, float).reshape(-1, 2)
        self.coords = np.asarray(self.coords, float).reshape(-1, 3)
        if self.coords.shape[0] != self.pixels.shape[0]:
            raise ShapeMismatch("pixel/coordinate count mismatch")
        if self.depths is not None:
            self.depths = np.asarray(self.depths, float).reshape(-1)
            if self.depths.shape[0] != self.pixels.shape[0]:
                raise ShapeMismatch("depth count mismatch")
        if self.gt_coords is not None:
            self.gt_coords = np.asarray(self.gt_coords, float).reshape(-1, 3)

    @property
    def n(self):
        return self.pixels.shape[0]


def frame_from_synthetic(sf, require_depth=True):
    """Flatten a rendered SyntheticFrame into correspondence arrays."""
    valid = sf.gt_coords.mask
    if require_depth:
        valid = valid & np.isfinite(sf.depths)
    rows, cols = np.nonzero(valid)
    pixels = np.column_stack([cols + 0.5, rows + 0.5])
    return Frame(
        pixels=pixels,
        coords=sf.pred_coords.coords[rows, cols],
        intrinsics=sf.intrinsics,
        depths=sf.depths[rows, cols],
        gt_coords=sf.gt_coords.coords[rows, cols],
        gt_pose=sf.pose,
    )


class OracleScorer:
    """Ground-truth confidences delta = exp(-s * error); test upper bound."""

    def __init__(self, scale=conf_mod.ConfidenceScale()):
        self.scale = scale

    def score(self, frame, indices):
        if frame.gt_coords is None:
            raise ShapeMismatch("oracle scorer needs ground-truth coordinates")
        return conf_mod.delta_target(frame.gt_coords[indices],
                                     frame.coords[indices], self.scale)


class ModelScorer:
    """Scores correspondences with a trained ConfidenceModel."""

    def __init__(self, model):
        self.model = model

    def score(self, frame, indices):
        return conf_mod.predict_confidences(
            self.model, frame.pixels[indices], frame.coords[indices])


class UniformScorer:
    """Constant confidences; reduces filtering to plain random sampling."""

    def score(self, frame, indices):
        return np.full(len(indices), 0.5)


@dataclass
class Hypothesis:
    pose: geometry.Pose
    support: np.ndarray   # frame indices of the kept correspondences
    score: float
    sampled: np.ndarray = None


def _solve(frame, indices, cfg):
    try:
        if cfg.solver == "kabsch":
            cam = geometry.backproject(frame.intrinsics, frame.pixels[indices],
                                       frame.depths[indices])
            return solvers.kabsch(cam, frame.coords[indices])
        return solvers.pnp(frame.pixels[indices], frame.coords[indices],
                           frame.intrinsics)
    except (TooFewPoints, DegenerateConfiguration, BehindCamera,
            np.linalg.LinAlgError) as exc:
        raise FailedHypothesis(str(exc)) from exc


def _keep_top(sampled, confidences, n_best):
    """Indices of the n_best most confident samples; ties keep sample order."""
    order = np.argsort(-confidences, kind="stable")[:n_best]
    return sampled[order], confidences[order]


def sample_hypothesis(frame, scorer, cfg, rng):
    """Draw one confidence-filtered hypothesis from the given rng stream."""
    if frame.n < cfg.n_k:
        raise TooFewCorrespondences(
            f"frame has {frame.n} correspondences, need {cfg.n_k}")
    sampled = rng.choice(frame.n, size=cfg.n_k, replace=False)
    confidences = scorer.score(frame, sampled)
    kept, kept_conf = _keep_top(sampled, confidences, cfg.n_best)
    pose = _solve(frame, kept, cfg)
    return Hypothesis(pose=pose, support=kept, score=float(kept_conf.mean()),
                      sampled=sampled)


def best_hypothesis(frame, scorer, cfg):
    """Generate h_p hypotheses and return the one with maximal mean confidence."""
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(cfg.seed).spawn(cfg.h_p)]
    best = None
    scores = []
    for stream in streams:
        try:
            hyp = sample_hypothesis(frame, scorer, cfg, stream)
        except FailedHypothesis:
            scores.append(np.nan)
            continue
        scores.append(hyp.score)
        if best is None or hyp.score > best.score:
            best = hyp
    if best is None:
        raise AllHypothesesFailed("every hypothesis failed to solve")
    return best, scores


def refine(frame, scorer, hyp, cfg):
    """Iteratively grow (or replace) the support set and re-solve.

    Returns (pose, info) where info records per-iteration kept sets and a
    warning flag if a solve failed and the previous pose was kept.
    """
    rng_streams = [np.random.default_rng(s)
                   for s in np.random.SeedSequence((cfg.seed, 1)).spawn(max(cfg.refine_iters, 1))]
    support = np.unique(hyp.support)
    pose = hyp.pose
    info = {"kept_sets": [], "support_sizes": [int(support.size)], "warning": False}
    for it in range(cfg.refine_iters):
        rng = rng_streams[it]
        sampled = rng.choice(frame.n, size=min(cfg.n_k, frame.n), replace=False)
        confidences = scorer.score(frame, sampled)
        kept, _ = _keep_top(sampled, confidences, cfg.n_best)
        info["kept_sets"].append(kept)
        if cfg.accumulate:
            support = np.unique(np.concatenate([support, kept]))
        else:
            support = np.unique(kept)
        info["support_sizes"].append(int(support.size))
        try:
            pose = _solve(frame, support, cfg)
        except FailedHypothesis:
            info["warning"] = True
    return pose, info


def localize(frame, scorer, cfg):
    """Full pipeline: best_hypothesis then refine. Returns (pose, diagnostics)."""
    t0 = time.perf_counter()
    hyp, scores = best_hypothesis(frame, scorer, cfg)
    t1 = time.perf_counter()
    pose, refine_info = refine(frame, scorer, hyp, cfg)
    t2 = time.perf_counter()
    diagnostics = {
        "hypothesis_scores": scores,
        "best_score": hyp.score,
        "support_size": int(np.unique(hyp.support).size),
        "refine": refine_info,
        "timing": {"sampling_s": t1 - t0, "refinement_s": t2 - t1},
    }
    if frame.gt_coords is not None:
        err = np.linalg.norm(frame.coords[hyp.support] - frame.gt_coords[hyp.support],
                             axis=1)
        diagnostics["kept_inlier_fraction"] = float(np.mean(err < 0.1))
    return pose, diagnostics

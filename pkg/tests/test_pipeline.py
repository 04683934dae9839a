import dataclasses

import numpy as np
import pytest

from reloc import confidence, geometry, pipeline, synth
from reloc.errors import (AllHypothesesFailed, ShapeMismatch,
                          TooFewCorrespondences)
from reloc.geometry import CameraIntrinsics
from reloc.pipeline import Frame, OracleScorer, PipelineConfig, UniformScorer

K = CameraIntrinsics(fx=45.0, fy=45.0, cx=24.0, cy=18.0, width=48, height=36)


def synthetic_frame(seed=0, inlier_prob=0.08):
    scene = synth.generate_scene(synth.SceneSpec(seed=seed))
    pose = synth.generate_trajectory(scene, 1, seed=seed + 10)[0]
    noise = synth.NoiseSpec(inlier_prob=inlier_prob, inlier_sigma=0.02)
    sf = synth.render_frame(scene, pose, K, noise, seed=seed + 20)
    return pipeline.frame_from_synthetic(sf), pose


class TestConfig:
    def test_n_best(self):
        assert PipelineConfig().n_best == 50
        assert PipelineConfig(n_k=100, keep_fraction=0.5).n_best == 50

    def test_validation(self):
        with pytest.raises(ShapeMismatch):
            PipelineConfig(keep_fraction=0.0)
        with pytest.raises(ShapeMismatch):
            PipelineConfig(h_p=0)
        with pytest.raises(ShapeMismatch):
            PipelineConfig(solver="icp")
        with pytest.raises(ShapeMismatch):
            PipelineConfig(n_k=20, keep_fraction=0.1, solver="pnp")


class TestFrame:
    def test_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            Frame(pixels=np.zeros((5, 2)), coords=np.zeros((4, 3)), intrinsics=K)

    def test_from_synthetic_shapes(self):
        frame, _ = synthetic_frame()
        assert frame.pixels.shape == (frame.n, 2)
        assert frame.coords.shape == (frame.n, 3)
        assert frame.depths.shape == (frame.n,)
        assert frame.n >= 500


class TestSampleHypothesis:
    def test_too_few_correspondences(self):
        frame = Frame(pixels=np.zeros((10, 2)), coords=np.zeros((10, 3)),
                      intrinsics=K, depths=np.ones(10))
        with pytest.raises(TooFewCorrespondences):
            pipeline.sample_hypothesis(frame, UniformScorer(), PipelineConfig(),
                                       np.random.default_rng(0))

    def test_uniform_scores_keep_sample_order(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(seed=0)
        rng = np.random.default_rng(3)
        expected = np.random.default_rng(3).choice(frame.n, size=cfg.n_k,
                                                   replace=False)
        hyp = pipeline.sample_hypothesis(frame, UniformScorer(), cfg, rng)
        assert np.array_equal(hyp.support, expected[:cfg.n_best])

    def test_score_is_mean_kept_confidence(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig()
        hyp = pipeline.sample_hypothesis(frame, OracleScorer(), cfg,
                                         np.random.default_rng(1))
        assert 0 <= hyp.score < 1
        assert hyp.support.size == cfg.n_best

    def test_oracle_filtering_boosts_inliers(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig()
        boosts = []
        rng = np.random.default_rng(0)
        for _ in range(100):
            hyp = pipeline.sample_hypothesis(frame, OracleScorer(), cfg, rng)
            err = np.linalg.norm(frame.coords[hyp.support]
                                 - frame.gt_coords[hyp.support], axis=1)
            boosts.append(np.mean(err < 0.1))
        assert np.mean(boosts) >= 0.45

    def test_noise_free_recovery(self):
        frame, gt_pose = synthetic_frame(inlier_prob=1.0)
        frame.coords = frame.gt_coords.copy()
        hyp = pipeline.sample_hypothesis(frame, UniformScorer(), PipelineConfig(),
                                         np.random.default_rng(0))
        assert geometry.rotation_error_deg(hyp.pose, gt_pose) < 1e-3
        assert geometry.translation_error_m(hyp.pose, gt_pose) < 1e-4


class TestBestHypothesis:
    def test_h_p_one_equals_single_sample(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(h_p=1, seed=7)
        best, scores = pipeline.best_hypothesis(frame, OracleScorer(), cfg)
        stream = np.random.default_rng(np.random.SeedSequence(7).spawn(1)[0])
        single = pipeline.sample_hypothesis(frame, OracleScorer(), cfg, stream)
        assert np.array_equal(best.support, single.support)
        assert best.score == single.score
        assert scores == [single.score]

    def test_score_is_maximum(self):
        frame, _ = synthetic_frame()
        best, scores = pipeline.best_hypothesis(frame, OracleScorer(),
                                                PipelineConfig(h_p=16))
        assert best.score == np.nanmax(scores)

    def test_deterministic(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(h_p=8, seed=5)
        a, _ = pipeline.best_hypothesis(frame, OracleScorer(), cfg)
        b, _ = pipeline.best_hypothesis(frame, OracleScorer(), cfg)
        assert np.array_equal(a.support, b.support)
        assert np.array_equal(a.pose.rotation, b.pose.rotation)


class TestRefine:
    def test_zero_iterations_keeps_pose(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(refine_iters=0)
        hyp, _ = pipeline.best_hypothesis(frame, OracleScorer(), cfg)
        pose, info = pipeline.refine(frame, OracleScorer(), hyp, cfg)
        assert np.array_equal(pose.rotation, hyp.pose.rotation)
        assert info["kept_sets"] == []

    def test_support_growth_bound_and_superset(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(refine_iters=8)
        hyp, _ = pipeline.best_hypothesis(frame, OracleScorer(), cfg)
        _, info = pipeline.refine(frame, OracleScorer(), hyp, cfg)
        sizes = info["support_sizes"]
        for k, size in enumerate(sizes):
            assert size <= cfg.n_best * (k + 1)
        final = set(range(frame.n)) if not info["kept_sets"] else None
        accumulated = set(np.unique(hyp.support))
        for kept in info["kept_sets"]:
            accumulated |= set(kept)
        assert sizes[-1] == len(accumulated)

    def test_refinement_helps_on_noisy_frames(self):
        cfg = PipelineConfig(h_p=4, refine_iters=8)
        before, after = [], []
        for seed in range(8):
            frame, gt_pose = synthetic_frame(seed=seed)
            run_cfg = dataclasses.replace(cfg, seed=seed)
            hyp, _ = pipeline.best_hypothesis(frame, OracleScorer(), run_cfg)
            pose, _ = pipeline.refine(frame, OracleScorer(), hyp, run_cfg)
            before.append(geometry.translation_error_m(hyp.pose, gt_pose))
            after.append(geometry.translation_error_m(pose, gt_pose))
        assert np.median(after) <= np.median(before)

    def test_replace_mode_caps_support(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(refine_iters=4, accumulate=False)
        hyp, _ = pipeline.best_hypothesis(frame, OracleScorer(), cfg)
        _, info = pipeline.refine(frame, OracleScorer(), hyp, cfg)
        assert all(s <= cfg.n_best for s in info["support_sizes"][1:])


class TestLocalize:
    def test_diagnostics_and_accuracy(self):
        frame, gt_pose = synthetic_frame()
        pose, diag = pipeline.localize(frame, OracleScorer(),
                                       PipelineConfig(h_p=16))
        assert geometry.rotation_error_deg(pose, gt_pose) < 5.0
        assert geometry.translation_error_m(pose, gt_pose) < 0.05
        assert len(diag["hypothesis_scores"]) == 16
        assert diag["kept_inlier_fraction"] > 0.45
        assert set(diag["timing"]) == {"sampling_s", "refinement_s"}

    def test_deterministic_poses(self):
        frame, _ = synthetic_frame()
        cfg = PipelineConfig(h_p=4, seed=11)
        a, da = pipeline.localize(frame, OracleScorer(), cfg)
        b, db = pipeline.localize(frame, OracleScorer(), cfg)
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
        assert da["hypothesis_scores"] == db["hypothesis_scores"]

    def test_solver_choice_keeps_sampling_sequence(self):
        frame, _ = synthetic_frame()
        kab = PipelineConfig(h_p=3, seed=2, solver="kabsch", refine_iters=2)
        pnp = dataclasses.replace(kab, solver="pnp")
        hyp_k, _ = pipeline.best_hypothesis(frame, OracleScorer(), kab)
        hyp_p, _ = pipeline.best_hypothesis(frame, OracleScorer(), pnp)
        assert np.array_equal(hyp_k.sampled, hyp_p.sampled)
        assert np.array_equal(hyp_k.support, hyp_p.support)

    def test_model_scorer_runs(self):
        frame, _ = synthetic_frame()
        norm = confidence.Normalization(
            scene_center=np.array([0.5, 0.5, 0.3]), scene_half_diameter=0.75,
            width=K.width, height=K.height)
        model = confidence.build_model(norm)
        pose, diag = pipeline.localize(frame, pipeline.ModelScorer(model),
                                       PipelineConfig(h_p=2, refine_iters=1))
        assert pose.rotation.shape == (3, 3)

import dataclasses

import numpy as np
import pytest

from reloc import evaluation, geometry, pipeline, synth
from reloc.errors import DegenerateLabels, EmptyInput, LengthMismatch
from reloc.geometry import Pose, random_pose

K = synth.geometry.CameraIntrinsics(fx=45.0, fy=45.0, cx=24.0, cy=18.0,
                                    width=48, height=36)


def pose_with_errors(base, rot_deg, trans_m):
    axis = np.array([0.0, 0.0, 1.0])
    bump = geometry.rotation_from_axis_angle(axis, np.deg2rad(rot_deg))
    return Pose(bump @ base.rotation,
                base.translation + np.array([trans_m, 0.0, 0.0]))


class TestMedianLow:
    def test_odd(self):
        assert evaluation.median_low([3.0, 1.0, 2.0]) == 2.0

    def test_even_takes_lower_middle(self):
        assert evaluation.median_low([1.0, 2.0, 3.0, 4.0]) == 2.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            evaluation.median_low([])


class TestPoseMetrics:
    def test_perfect(self):
        rng = np.random.default_rng(0)
        poses = [random_pose(rng) for _ in range(5)]
        m = evaluation.pose_metrics(poses, poses)
        assert m.median_rotation_deg == 0.0
        assert m.median_translation_m == 0.0
        assert m.accuracy == 1.0

    def test_joint_threshold(self):
        rng = np.random.default_rng(1)
        gt = [random_pose(rng), random_pose(rng)]
        est = [pose_with_errors(gt[0], 4.0, 0.04),
               pose_with_errors(gt[1], 6.0, 0.04)]
        m = evaluation.pose_metrics(est, gt)
        assert m.accuracy == 0.5

    def test_length_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(LengthMismatch):
            evaluation.pose_metrics([random_pose(rng)], [])


class TestInlierFraction:
    def test_exact(self):
        x = np.random.default_rng(0).uniform(size=(10, 3))
        assert evaluation.inlier_fraction(x, x) == 1.0

    def test_boundary_is_strict(self):
        gt = np.zeros((4, 3))
        pred = np.zeros((4, 3))
        pred[:, 0] = 0.1
        assert evaluation.inlier_fraction(pred, gt) == 0.0
        pred[:, 0] = 0.1 - 1e-9
        assert evaluation.inlier_fraction(pred, gt) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(LengthMismatch):
            evaluation.inlier_fraction(np.zeros((3, 3)), np.zeros((4, 3)))


class TestRoc:
    def test_perfect_separation(self):
        conf = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([True, True, False, False])
        assert evaluation.roc(conf, labels).auc == 1.0

    def test_reversal_symmetry(self):
        rng = np.random.default_rng(3)
        conf = rng.uniform(size=200)
        labels = rng.uniform(size=200) < 0.4
        a = evaluation.roc(conf, labels).auc
        b = evaluation.roc(-conf, labels).auc
        assert np.isclose(a + b, 1.0)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(4)
        conf = rng.uniform(size=300)
        labels = rng.uniform(size=300) < conf
        a = evaluation.roc(conf, labels).auc
        b = evaluation.roc(np.exp(3 * conf), labels).auc
        assert np.isclose(a, b)

    def test_random_confidences_near_half(self):
        rng = np.random.default_rng(5)
        conf = rng.uniform(size=10_000)
        labels = rng.uniform(size=10_000) < 0.1
        assert abs(evaluation.roc(conf, labels).auc - 0.5) < 0.05

    def test_degenerate_labels(self):
        with pytest.raises(DegenerateLabels):
            evaluation.roc(np.ones(5), np.ones(5, bool))


def small_suite(n_frames=4, inlier_prob=0.08):
    scene = synth.generate_scene(synth.SceneSpec(seed=1))
    poses = synth.generate_trajectory(scene, n_frames, seed=2)
    noise = synth.NoiseSpec(inlier_prob=inlier_prob, inlier_sigma=0.02)
    return [synth.render_frame(scene, p, K, noise, seed=30 + i)
            for i, p in enumerate(poses)]


class TestRandomBaseline:
    def test_deterministic(self):
        frame = pipeline.frame_from_synthetic(small_suite(1)[0])
        cfg = pipeline.PipelineConfig(h_p=4, seed=9)
        a = evaluation.random_baseline_localize(frame, cfg)
        b = evaluation.random_baseline_localize(frame, cfg)
        assert np.array_equal(a.rotation, b.rotation)

    def test_noise_free_recovers(self):
        sf = small_suite(1, inlier_prob=1.0)[0]
        sf.pred_coords.coords[:] = sf.gt_coords.coords
        frame = pipeline.frame_from_synthetic(sf)
        pose = evaluation.random_baseline_localize(
            frame, pipeline.PipelineConfig(h_p=1, seed=0))
        assert geometry.rotation_error_deg(pose, sf.pose) < 1e-3


class TestSmoothCoordinates:
    def test_preserves_mask_and_shape(self):
        sf = small_suite(1)[0]
        out = evaluation.smooth_coordinates(sf)
        assert out.coords.shape == sf.pred_coords.coords.shape
        assert np.array_equal(out.mask, sf.pred_coords.mask)

    def test_constant_map_unchanged(self):
        sf = small_suite(1, inlier_prob=1.0)[0]
        sf.pred_coords.coords[sf.pred_coords.mask] = [0.5, 0.5, 0.3]
        out = evaluation.smooth_coordinates(sf)
        inner = sf.pred_coords.mask.copy()
        inner[:1] = inner[-1:] = False
        inner[:, :1] = inner[:, -1:] = False
        assert np.allclose(out.coords[inner], [0.5, 0.5, 0.3], atol=1e-9)


class TestRunAblation:
    def test_rows_and_orderings(self):
        suite = small_suite(4)
        cfg = pipeline.PipelineConfig(h_p=2, refine_iters=2, seed=0)
        rows = evaluation.run_ablation(
            suite, cfg, variants=("random", "oracle_confidence"),
            h_p_values=(1, 2))
        assert len(rows) == 4
        by_key = {(r.variant, r.h_p): r for r in rows}
        assert by_key[("oracle_confidence", 2)].median_translation_m < \
            by_key[("random", 2)].median_translation_m
        assert rows[0].mean_raw_inlier_fraction == pytest.approx(0.08, abs=0.03)

    def test_deterministic(self):
        suite = small_suite(2)
        cfg = pipeline.PipelineConfig(h_p=2, refine_iters=1, seed=3)
        a = evaluation.run_ablation(suite, cfg, variants=("oracle_confidence",),
                                    h_p_values=(1,))
        b = evaluation.run_ablation(suite, cfg, variants=("oracle_confidence",),
                                    h_p_values=(1,))
        assert a == b

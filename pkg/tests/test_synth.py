import numpy as np
import pytest

from reloc import geometry, synth
from reloc.errors import SceneNotVisible, ShapeMismatch
from reloc.geometry import CameraIntrinsics
from reloc.synth import NoiseSpec, SceneSpec

K = CameraIntrinsics(fx=45.0, fy=45.0, cx=24.0, cy=18.0, width=48, height=36)


def canonical_frame(seed=0, noise=NoiseSpec()):
    spec = SceneSpec(seed=seed)
    scene = synth.generate_scene(spec)
    pose = synth.generate_trajectory(scene, 1, seed=seed + 50)[0]
    return scene, synth.render_frame(scene, pose, K, noise, seed=seed + 99)


class TestSceneSpec:
    def test_degenerate_box(self):
        with pytest.raises(ShapeMismatch):
            SceneSpec(box_min=np.ones(3), box_max=np.ones(3))

    def test_amplitude_bound(self):
        with pytest.raises(ShapeMismatch):
            SceneSpec(amplitude=0.7)

    def test_dict_round_trip(self):
        spec = SceneSpec(seed=3)
        again = SceneSpec.from_dict(spec.to_dict())
        assert np.array_equal(again.box_min, spec.box_min)
        assert again.amplitude == spec.amplitude


class TestScene:
    def test_surface_inside_box(self):
        scene = synth.generate_scene(SceneSpec(seed=1))
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, 100)
        y = rng.uniform(0, 1, 100)
        h = scene.surface_height(x, y)
        assert np.all(h >= 0.0)
        assert np.all(h <= 0.35)

    def test_outside_box_is_nan(self):
        scene = synth.generate_scene(SceneSpec(seed=1))
        assert np.isnan(scene.surface_height(np.array([-0.1]), np.array([0.5]))[0])

    def test_deterministic(self):
        a = synth.generate_scene(SceneSpec(seed=5))
        b = synth.generate_scene(SceneSpec(seed=5))
        assert np.array_equal(a.heights, b.heights)


class TestRenderFrame:
    def test_depth_consistent_with_ground_truth(self):
        # backprojecting the stored depth through the pose must land on
        # the stored scene coordinate, up to the marching tolerance
        _, frame = canonical_frame()
        rows, cols = np.nonzero(frame.gt_coords.mask & np.isfinite(frame.depths))
        pixels = np.column_stack([cols + 0.5, rows + 0.5])
        cam = geometry.backproject(K, pixels, frame.depths[rows, cols])
        world = geometry.camera_to_scene(frame.pose, cam)
        err = np.linalg.norm(world - frame.gt_coords.coords[rows, cols], axis=1)
        assert np.max(err) < 1e-5

    def test_surface_points_lie_on_scene_boundary(self):
        # most rays hit the top of the height field; a few grazing rays
        # enter through the side walls of the solid and end up below it
        scene, frame = canonical_frame(seed=1)
        pts = frame.gt_coords.coords[frame.gt_coords.mask]
        h = scene.surface_height(pts[:, 0], pts[:, 1])
        on_top = np.abs(pts[:, 2] - h) < 1e-4
        below = pts[:, 2] <= np.nan_to_num(h, nan=np.inf) + 1e-4
        assert np.all(below | np.isnan(h))
        assert np.mean(on_top) > 0.95

    def test_inlier_fraction_calibrated(self):
        noise = NoiseSpec(inlier_prob=0.08, inlier_sigma=0.02)
        fractions = []
        for seed in range(5):
            _, frame = canonical_frame(seed=seed, noise=noise)
            mask = frame.gt_coords.mask
            err = np.linalg.norm(frame.pred_coords.coords[mask]
                                 - frame.gt_coords.coords[mask], axis=1)
            fractions.append(np.mean(err < 0.1))
        assert abs(np.mean(fractions) - 0.08) < 0.01

    def test_noise_free_predictions(self):
        _, frame = canonical_frame(noise=NoiseSpec(inlier_prob=1.0, inlier_sigma=0.0))
        mask = frame.gt_coords.mask
        assert np.array_equal(frame.pred_coords.coords[mask],
                              frame.gt_coords.coords[mask])

    def test_missing_depth_dropped(self):
        _, frame = canonical_frame(noise=NoiseSpec(missing_depth_prob=0.5))
        mask = frame.gt_coords.mask
        missing = np.isnan(frame.depths[mask]).mean()
        assert 0.3 < missing < 0.7

    def test_deterministic(self):
        _, a = canonical_frame(seed=3)
        _, b = canonical_frame(seed=3)
        assert np.array_equal(a.depths, b.depths, equal_nan=True)
        assert np.array_equal(a.pred_coords.coords, b.pred_coords.coords,
                              equal_nan=True)

    def test_scene_not_visible(self):
        scene = synth.generate_scene(SceneSpec(seed=0))
        away = synth.look_at([0.5, 0.5, 2.0], [0.5, 0.5, 5.0])
        with pytest.raises(SceneNotVisible):
            synth.render_frame(scene, away, K, NoiseSpec(), seed=0)


class TestTrajectory:
    def test_poses_look_at_scene(self):
        scene = synth.generate_scene(SceneSpec(seed=2))
        poses = synth.generate_trajectory(scene, 10, seed=4)
        assert len(poses) == 10
        for pose in poses:
            to_center = scene.spec.center - pose.translation
            to_center /= np.linalg.norm(to_center)
            # optical axis (third camera axis) points at the center
            assert np.dot(pose.rotation[:, 2], to_center) > 0.999

    def test_every_pose_renders(self):
        scene = synth.generate_scene(SceneSpec(seed=2))
        for i, pose in enumerate(synth.generate_trajectory(scene, 6, seed=4)):
            frame = synth.render_frame(scene, pose, K, NoiseSpec(), seed=i)
            assert frame.gt_coords.mask.sum() >= 500

    def test_needs_at_least_one_frame(self):
        scene = synth.generate_scene(SceneSpec(seed=2))
        with pytest.raises(ShapeMismatch):
            synth.generate_trajectory(scene, 0, seed=0)


class TestToyRegressor:
    def test_learns_clean_targets(self):
        spec = SceneSpec(seed=2)
        scene = synth.generate_scene(spec)
        poses = synth.generate_trajectory(scene, 4, seed=5)
        noise = NoiseSpec(inlier_prob=1.0, inlier_sigma=0.0)
        frames = [synth.render_frame(scene, p, K, noise, seed=i)
                  for i, p in enumerate(poses)]
        cfg = synth.ToyRegressorConfig(epochs=40)
        net, history = synth.train_toy_regressor(frames[:3], spec, cfg)
        assert history[-1] < history[0]
        err = synth.regressor_heldout_error(net, frames[3:], spec)
        assert err < 0.5 * spec.diameter

    def test_smoothing_does_not_hurt(self):
        spec = SceneSpec(seed=3)
        scene = synth.generate_scene(spec)
        pose = synth.generate_trajectory(scene, 1, seed=6)[0]
        noise = NoiseSpec(inlier_prob=1.0, inlier_sigma=0.005)
        train = [synth.render_frame(scene, pose, K, noise, seed=i)
                 for i in range(3)]
        held = [synth.render_frame(scene, pose, K,
                                   NoiseSpec(inlier_prob=1.0, inlier_sigma=0.0),
                                   seed=9)]
        errs = {}
        for use_smooth in (False, True):
            cfg = synth.ToyRegressorConfig(epochs=30, use_smooth=use_smooth,
                                           smooth_points=50)
            net, _ = synth.train_toy_regressor(train, spec, cfg, targets="pred")
            errs[use_smooth] = synth.regressor_heldout_error(net, held, spec)
        assert errs[True] <= errs[False] * 1.05

    def test_training_halves_initial_error(self):
        spec = SceneSpec(seed=2)
        scene = synth.generate_scene(spec)
        pose = synth.generate_trajectory(scene, 1, seed=5)[0]
        noise = NoiseSpec(inlier_prob=1.0, inlier_sigma=0.0)
        frames = [synth.render_frame(scene, pose, K, noise, seed=i)
                  for i in range(2)]
        initial_net, _ = synth.train_toy_regressor(
            frames[:1], spec, synth.ToyRegressorConfig(epochs=0))
        net, _ = synth.train_toy_regressor(
            frames[:1], spec, synth.ToyRegressorConfig(epochs=60))
        before = synth.regressor_heldout_error(initial_net, frames[1:], spec)
        after = synth.regressor_heldout_error(net, frames[1:], spec)
        assert after < 0.5 * before

    def test_unknown_loss(self):
        spec = SceneSpec(seed=2)
        scene = synth.generate_scene(spec)
        pose = synth.generate_trajectory(scene, 1, seed=5)[0]
        frame = synth.render_frame(scene, pose, K, NoiseSpec(), seed=0)
        with pytest.raises(ShapeMismatch):
            synth.train_toy_regressor([frame], spec,
                                      synth.ToyRegressorConfig(loss="huber", epochs=1))

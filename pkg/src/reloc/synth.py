"""Synthetic scenes, trajectories, and noisy coordinate predictions.

A seeded height-field surface over a box stands in for a real scene;
frames are rendered by ray-marching pixel rays against the surface, and
predicted scene coordinates are the ground truth corrupted by a
calibrated inlier/outlier noise model. Also provides a toy per-pixel
coordinate regressor trained with the robust losses.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry, losses, nnet
from .errors import DivergedTraining, SceneNotVisible, ShapeMismatch
from .geometry import Pose
from .losses import CoordinateMap, NeighborhoodSpec, TukeyConfig

MARCH_STEP_FRACTION = 1e-3
BISECTION_TOL_M = 1e-6


@dataclass(frozen=True)
class SceneSpec:
    box_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    box_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 0.6]))
    grid_res: int = 8
    amplitude: float = 0.35
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "box_min", np.asarray(self.box_min, float))
        object.__setattr__(self, "box_max", np.asarray(self.box_max, float))
        if np.any(self.box_max <= self.box_min):
            raise ShapeMismatch("degenerate scene box")
        if self.amplitude > self.box_max[2] - self.box_min[2]:
            raise ShapeMismatch("surface amplitude exceeds box height")

    @property
    def diameter(self):
        return float(np.linalg.norm(self.box_max - self.box_min))

    @property
    def center(self):
        return (self.box_min + self.box_max) / 2.0

    def to_dict(self):
        return {"box_min": list(self.box_min), "box_max": list(self.box_max),
                "grid_res": self.grid_res, "amplitude": self.amplitude,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["box_min"]), np.asarray(d["box_max"]),
                   d["grid_res"], d["amplitude"], d["seed"])


@dataclass(frozen=True)
class NoiseSpec:
    inlier_prob: float = 0.08
    inlier_sigma: float = 0.02
    missing_depth_prob: float = 0.0

    def __post_init__(self):
        if not (0 <= self.inlier_prob <= 1 and 0 <= self.missing_depth_prob <= 1):
            raise ShapeMismatch("probabilities must be in [0, 1]")
        if self.inlier_sigma < 0:
            raise ShapeMismatch("inlier sigma must be non-negative")

    def to_dict(self):
        return {"inlier_prob": self.inlier_prob, "inlier_sigma": self.inlier_sigma,
                "missing_depth_prob": self.missing_depth_prob}

    @classmethod
    def from_dict(cls, d):
        return cls(d["inlier_prob"], d["inlier_sigma"], d["missing_depth_prob"])


@dataclass
class Scene:
    spec: SceneSpec
    heights: np.ndarray  # (grid_res, grid_res) control heights above box_min z

    def surface_height(self, x, y):
        """Bilinear height-field value at world (x, y); NaN outside the box."""
        s = self.spec
        gx = (x - s.box_min[0]) / (s.box_max[0] - s.box_min[0]) * (s.grid_res - 1)
        gy = (y - s.box_min[1]) / (s.box_max[1] - s.box_min[1]) * (s.grid_res - 1)
        inside = (gx >= 0) & (gx <= s.grid_res - 1) & (gy >= 0) & (gy <= s.grid_res - 1)
        gx = np.clip(gx, 0, s.grid_res - 1 - 1e-12)
        gy = np.clip(gy, 0, s.grid_res - 1 - 1e-12)
        ix = np.floor(gx).astype(int)
        iy = np.floor(gy).astype(int)
        fx = gx - ix
        fy = gy - iy
        h = (self.heights[iy, ix] * (1 - fx) * (1 - fy)
             + self.heights[iy, ix + 1] * fx * (1 - fy)
             + self.heights[iy + 1, ix] * (1 - fx) * fy
             + self.heights[iy + 1, ix + 1] * fx * fy)
        return np.where(inside, s.box_min[2] + h, np.nan)


def generate_scene(spec):
    """Deterministic height-field surface inside the scene box."""
    rng = np.random.default_rng(spec.seed)
    heights = rng.uniform(0.0, spec.amplitude, (spec.grid_res, spec.grid_res))
    return Scene(spec, heights)


@dataclass
class SyntheticFrame:
    pose: Pose
    intrinsics: geometry.CameraIntrinsics
    depths: np.ndarray           # (h, w), NaN where no hit or depth dropped
    gt_coords: CoordinateMap     # valid where the ray hits the surface
    pred_coords: CoordinateMap   # same validity as gt
    inlier_mask: np.ndarray      # (h, w) bool, True where noise was Gaussian


def _pixel_rays(K, pose):
    v, u = np.meshgrid(np.arange(K.height) + 0.5, np.arange(K.width) + 0.5,
                       indexing="ij")
    pixels = np.stack([u, v], axis=-1).reshape(-1, 2)
    dirs_cam = geometry.backproject(K, pixels, np.ones(pixels.shape[0]))
    dirs_world = dirs_cam @ pose.rotation.T
    return pixels, dirs_world


def render_frame(scene, pose, K, noise, seed, min_hit_fraction=0.3):
    """Ray-march every pixel against the surface and add prediction noise.

    Depth stored per pixel is the camera-frame z of the hit (so the
    backproject/camera_to_scene round trip reproduces the stored ground
    truth coordinate exactly, up to marching tolerance).
    """
    spec = scene.spec
    origin = pose.translation
    _, dirs = _pixel_rays(K, pose)  # world directions, unit camera depth
    n = dirs.shape[0]
    step = MARCH_STEP_FRACTION * spec.diameter
    s_max = np.linalg.norm(origin - spec.center) + spec.diameter

    # march until the ray drops below the surface
    lo = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    prev_above = np.ones(n, dtype=bool)
    s = step
    while s <= s_max:
        pts = origin + dirs * s
        surf = scene.surface_height(pts[:, 0], pts[:, 1])
        below = np.isfinite(surf) & (pts[:, 2] <= surf)
        new_hit = below & prev_above & ~hit
        lo[new_hit] = s - step
        hit |= new_hit
        prev_above = ~below
        s += step

    # bisection refinement on the bracketed crossings
    a = lo.copy()
    b = lo + step
    active = hit.copy()
    while np.any(active) and np.max(b[active] - a[active]) > BISECTION_TOL_M:
        mid = (a + b) / 2.0
        pts = origin + dirs * mid[:, None]
        surf = scene.surface_height(pts[:, 0], pts[:, 1])
        below = np.isfinite(surf) & (pts[:, 2] <= surf)
        a = np.where(active & ~below, mid, a)
        b = np.where(active & below, mid, b)
    s_hit = (a + b) / 2.0

    if hit.sum() < min_hit_fraction * n:
        raise SceneNotVisible(
            f"only {hit.sum()}/{n} pixels hit the surface")

    h, w = K.height, K.width
    hit_map = hit.reshape(h, w)
    gt = np.full((h, w, 3), np.nan)
    gt.reshape(-1, 3)[hit] = origin + dirs[hit] * s_hit[hit, None]
    depth = np.full((h, w), np.nan)
    depth.reshape(-1)[hit] = s_hit[hit]  # dirs have unit camera z

    rng = np.random.default_rng(seed)
    inlier = rng.uniform(size=(h, w)) < noise.inlier_prob
    inlier &= hit_map
    gauss = rng.normal(0.0, 1.0, (h, w, 3)) * noise.inlier_sigma
    outlier = rng.uniform(spec.box_min, spec.box_max, (h, w, 3))
    pred = np.where(inlier[..., None], gt + gauss, outlier)
    pred[~hit_map] = np.nan
    dropped = rng.uniform(size=(h, w)) < noise.missing_depth_prob
    depth[dropped] = np.nan

    return SyntheticFrame(
        pose=pose,
        intrinsics=K,
        depths=depth,
        gt_coords=CoordinateMap(gt, hit_map),
        pred_coords=CoordinateMap(pred, hit_map),
        inlier_mask=inlier,
    )


def generate_trajectory(scene, n_frames, seed, radius_scale=0.5, height_scale=0.45):
    """Smooth orbit above the scene, every pose looking at the scene center."""
    if n_frames < 1:
        raise ShapeMismatch("need at least one frame")
    spec = scene.spec
    rng = np.random.default_rng(seed)
    center = spec.center
    radius = radius_scale * spec.diameter
    height = spec.box_max[2] + height_scale * spec.diameter
    phase = rng.uniform(0, 2 * np.pi)
    poses = []
    for k in range(n_frames):
        angle = phase + 2 * np.pi * k / n_frames + rng.normal(0, 0.02)
        pos = np.array([center[0] + radius * np.cos(angle),
                        center[1] + radius * np.sin(angle),
                        height + rng.normal(0, 0.01 * spec.diameter)])
        poses.append(look_at(pos, center))
    return poses


def look_at(position, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose with the optical axis pointing at target."""
    position = np.asarray(position, float)
    z = np.asarray(target, float) - position
    z = z / np.linalg.norm(z)
    up = np.asarray(up, float)
    x = np.cross(z, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        x = np.cross(z, [0.0, 1.0, 0.0])
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), position)


@dataclass
class ToyRegressorConfig:
    hidden_widths: tuple = (48, 48)
    epochs: int = 60
    learning_rate: float = 5e-4
    seed: int = 0
    loss: str = "tukey"          # "tukey" or "l1"
    use_smooth: bool = False
    smooth_points: int = 100     # sampled pixels per frame for the smoothing term
    smooth_weight: float = 2e-5  # balances the unnormalized smoothing sum
                                 # against the per-pixel coordinate loss
    tukey_c: float | None = None  # None -> half the scene diameter


def _regressor_inputs(frame, scene_spec):
    """Normalized (u, v, depth) for every pixel with valid depth."""
    K = frame.intrinsics
    valid = frame.gt_coords.mask & np.isfinite(frame.depths)
    rows, cols = np.nonzero(valid)
    u = (cols + 0.5) / K.width * 2 - 1
    v = (rows + 0.5) / K.height * 2 - 1
    d = frame.depths[rows, cols] / scene_spec.diameter
    return np.column_stack([u, v, d]), rows, cols, valid


def train_toy_regressor(frames, scene_spec, cfg=ToyRegressorConfig(),
                        targets="gt", spec=NeighborhoodSpec()):
    """Per-pixel MLP (u, v, depth) -> scene coordinate, trained with the
    robust losses via RMSprop.

    targets selects the supervision source: "gt" uses the clean ground
    truth, "pred" the outlier-contaminated predictions (for the loss
    ablation). Returns (net, per-epoch losses).
    """
    c = cfg.tukey_c if cfg.tukey_c is not None else scene_spec.diameter / 2.0
    tukey = TukeyConfig(c)
    widths = (3,) + tuple(cfg.hidden_widths) + (3,)
    acts = ("relu",) * len(cfg.hidden_widths) + ("identity",)
    net = nnet.init_dense_net(widths, acts, cfg.seed)
    state = nnet.RmspropState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    prepared = []
    for frame in frames:
        feats, rows, cols, valid = _regressor_inputs(frame, scene_spec)
        target_map = frame.gt_coords if targets == "gt" else frame.pred_coords
        tmap = CoordinateMap(np.where(valid[..., None], target_map.coords, 0.0),
                             valid)
        prepared.append((feats, rows, cols, valid, tmap, frame.depths))

    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        for fi in order:
            feats, rows, cols, valid, tmap, depths = prepared[fi]
            out, caches = nnet.forward_cached(net, feats)
            pred_map = np.zeros(tmap.coords.shape)
            pred_map[rows, cols] = out
            pm = CoordinateMap(pred_map, valid)
            if cfg.loss == "tukey":
                loss, grad = losses.coords_loss(pm, tmap, tukey)
            elif cfg.loss == "l1":
                loss, grad = losses.l1_coords_loss(pm, tmap)
            else:
                raise ShapeMismatch(f"unknown loss {cfg.loss!r}")
            if cfg.use_smooth:
                n_pick = min(cfg.smooth_points, rows.size)
                pick = rng.choice(rows.size, size=n_pick, replace=False)
                indices = list(zip(rows[pick], cols[pick]))
                l_s, g_s = losses.smooth_loss(pm, depths, spec, indices)
                loss += cfg.smooth_weight * l_s
                grad = grad + cfg.smooth_weight * g_s
            epoch_loss += loss
            grads, _ = nnet.backward(net, caches, grad[rows, cols])
            nnet.rmsprop_step(state, net.parameters(), nnet.flatten_grads(grads))
        mean = epoch_loss / len(prepared)
        if not np.isfinite(mean):
            raise DivergedTraining("toy regressor loss is not finite")
        history.append(mean)
    return net, history


def regressor_heldout_error(net, frames, scene_spec):
    """Mean coordinate error against clean ground truth."""
    errs = []
    for frame in frames:
        feats, rows, cols, _ = _regressor_inputs(frame, scene_spec)
        out = nnet.forward(net, feats)
        gt = frame.gt_coords.coords[rows, cols]
        errs.append(np.linalg.norm(out - gt, axis=1))
    return float(np.concatenate(errs).mean())

"""Per-point correspondence confidence: targets, model, training, inference.

Targets are delta = exp(-s * ||X - X_hat||). The regressor is a small
PointNet-style network: a shared per-point encoder, a global max-pool
context concatenated back onto each point feature, and a per-point head
whose final scalar passes through tanh then relu, so outputs live in
[0, 1) for any finite weights. Predictions are exactly permutation
equivariant over the input point set.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .errors import DivergedTraining, EmptyInput, EmptyTrainingSet, ShapeMismatch
from .nnet import DenseNet

DEFAULT_SCALE = 2.8768


@dataclass(frozen=True)
class ConfidenceScale:
    s: float = DEFAULT_SCALE

    def __post_init__(self):
        if not self.s > 0:
            raise ShapeMismatch(f"confidence scale must be positive, got {self.s}")


def solve_scale(t_inlier, p_lower):
    """Scale s so that an error of t_inlier meters maps to probability p_lower."""
    if not (0 < p_lower < 1):
        raise ShapeMismatch("p_lower must be in (0, 1)")
    if not t_inlier > 0:
        raise ShapeMismatch("t_inlier must be positive")
    return -np.log(p_lower) / t_inlier


def delta_target(gt, pred, scale=ConfidenceScale()):
    """Confidence target(s) exp(-s * ||gt - pred||), in (0, 1]."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    err = np.linalg.norm(gt - pred, axis=-1)
    return np.exp(-scale.s * err)


@dataclass(frozen=True)
class Normalization:
    """Constants mapping raw (pixel, coordinate) inputs into tanh-friendly range."""

    scene_center: np.ndarray
    scene_half_diameter: float
    width: int
    height: int

    def to_dict(self):
        return {
            "scene_center": list(np.asarray(self.scene_center, float)),
            "scene_half_diameter": self.scene_half_diameter,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["scene_center"], float), d["scene_half_diameter"],
                   d["width"], d["height"])


def normalize_inputs(pixels, coords, norm):
    """Stack pixels scaled to [-1, 1] with centered/scaled coordinates."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if pixels.shape[0] != coords.shape[0]:
        raise ShapeMismatch("pixel and coordinate counts differ")
    u = 2.0 * pixels[:, 0] / norm.width - 1.0
    v = 2.0 * pixels[:, 1] / norm.height - 1.0
    c = (coords - np.asarray(norm.scene_center)) / norm.scene_half_diameter
    return np.column_stack([u, v, c])


@dataclass
class ConfidenceModel:
    encoder: DenseNet
    head: DenseNet
    norm: Normalization
    scale: ConfidenceScale = field(default_factory=ConfidenceScale)


@dataclass
class FrameSamples:
    """One training frame: raw pixels (n, 2), predicted coords (n, 3), targets (n,)."""

    pixels: np.ndarray
    coords: np.ndarray
    targets: np.ndarray


@dataclass
class TrainConfig:
    epochs: int = 600
    batch_frames: int = 20
    learning_rate: float = 2e-3
    seed: int = 0
    encoder_widths: tuple = (32, 64)
    head_widths: tuple = (32,)


def build_model(norm, scale=ConfidenceScale(), cfg=TrainConfig()):
    enc_widths = (5,) + tuple(cfg.encoder_widths)
    encoder = nnet.init_dense_net(enc_widths, ("relu",) * len(cfg.encoder_widths),
                                  cfg.seed)
    feat = enc_widths[-1]
    head_widths = (2 * feat,) + tuple(cfg.head_widths) + (1,)
    head = nnet.init_dense_net(head_widths,
                               ("relu",) * len(cfg.head_widths) + ("identity",),
                               cfg.seed + 1)
    # start the tanh-relu output gate open, otherwise a negative initial
    # raw score zeroes every gradient and the head never recovers
    head.layers[-1].bias[:] = 0.5
    return ConfidenceModel(encoder, head, norm, scale)


def _forward_set(model, feats):
    """Score one point set. Returns (confidences, caches for backward)."""
    enc_out, enc_caches = nnet.forward_cached(model.encoder, feats)
    pooled = enc_out.max(axis=0)
    argmax = enc_out.argmax(axis=0)
    head_in = np.hstack([enc_out, np.tile(pooled, (enc_out.shape[0], 1))])
    raw, head_caches = nnet.forward_cached(model.head, head_in)
    raw = raw[:, 0]
    th = np.tanh(raw)
    conf = np.maximum(th, 0.0)
    return conf, (enc_caches, head_caches, argmax, raw, th)


def _backward_set(model, caches, conf_grad):
    """Gradients of a scalar loss w.r.t. all model parameters for one set."""
    enc_caches, head_caches, argmax, raw, th = caches
    draw = conf_grad * (th > 0) * (1.0 - th * th)
    head_grads, dhead_in = nnet.backward(model.head, head_caches, draw[:, None])
    feat = dhead_in.shape[1] // 2
    denc = dhead_in[:, :feat].copy()
    dpooled = dhead_in[:, feat:].sum(axis=0)
    denc[argmax, np.arange(feat)] += dpooled
    enc_grads, _ = nnet.backward(model.encoder, enc_caches, denc)
    return enc_grads, head_grads


def predict_confidences(model, pixels, coords):
    """Per-point probabilities in [0, 1); exactly permutation equivariant."""
    feats = normalize_inputs(pixels, coords, model.norm)
    if feats.shape[0] == 0:
        raise EmptyInput("no points to score")
    conf, _ = _forward_set(model, feats)
    return conf


def train_confidence(frames, norm, cfg=TrainConfig(), scale=ConfidenceScale()):
    """Fit the confidence regressor on per-frame point sets.

    The squared-error loss sum((delta - delta_hat)^2) is averaged over the
    batch for the gradient. Returns (model, per-epoch mean losses).
    """
    if not frames:
        raise EmptyTrainingSet("no training frames")
    model = build_model(norm, scale, cfg)
    params = model.encoder.parameters() + model.head.parameters()
    state = nnet.RmspropState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    feats = [normalize_inputs(f.pixels, f.coords, norm) for f in frames]
    targets = [np.asarray(f.targets, dtype=np.float64) for f in frames]
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(frames))
        epoch_loss = 0.0
        n_points = 0
        for start in range(0, len(order), cfg.batch_frames):
            batch = order[start:start + cfg.batch_frames]
            grads = [np.zeros_like(p) for p in params]
            batch_points = sum(targets[fi].size for fi in batch)
            for fi in batch:
                conf, caches = _forward_set(model, feats[fi])
                diff = conf - targets[fi]
                epoch_loss += float(diff @ diff)
                n_points += diff.size
                enc_g, head_g = _backward_set(model, caches, 2.0 * diff / batch_points)
                for acc, g in zip(grads, nnet.flatten_grads(enc_g) + nnet.flatten_grads(head_g)):
                    acc += g
            nnet.rmsprop_step(state, params, grads)
        mean_loss = epoch_loss / max(n_points, 1)
        if not np.isfinite(mean_loss):
            raise DivergedTraining("confidence training loss is not finite")
        history.append(mean_loss)
    return model, history


def save_model(path, model):
    """Model container plus a JSON sidecar with normalization and scale."""
    path = str(path)
    nnet.save_layers(path, model.encoder.layers + model.head.layers)
    sidecar = {
        "encoder_layers": len(model.encoder.layers),
        "normalization": model.norm.to_dict(),
        "scale": model.scale.s,
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    path = str(path)
    layers = nnet.load_layers(path)
    with open(path + ".json") as f:
        sidecar = json.load(f)
    n_enc = sidecar["encoder_layers"]
    return ConfidenceModel(
        DenseNet(layers[:n_enc]),
        DenseNet(layers[n_enc:]),
        Normalization.from_dict(sidecar["normalization"]),
        ConfidenceScale(sidecar["scale"]),
    )

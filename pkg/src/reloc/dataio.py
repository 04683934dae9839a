"""Dataset file formats and (de)serialization.

Per frame: `frame-NNNNNN.depth.bin` (magic "RLDM", u32 width, u32 height,
row-major little-endian f32 meters, NaN = missing), `frame-NNNNNN.pose.txt`
(4x4 row-major camera-to-world), optional `frame-NNNNNN.coords.bin` and
`frame-NNNNNN.gtcoords.bin` (same header, 3 interleaved channels), plus a
shared `intrinsics.json` and a `scene.json` manifest.
"""

import json
import re
import struct
from pathlib import Path

import numpy as np

from . import synth
from .errors import DataError
from .geometry import CameraIntrinsics, Pose
from .losses import CoordinateMap

MAP_MAGIC = b"RLDM"


def write_map(path, data):
    """data is (h, w) or (h, w, 3) float; stored as f32 with an RLDM header."""
    data = np.asarray(data, dtype=np.float32)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(data.astype("<f4").tobytes(order="C"))


def read_map(path, channels=1):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    if raw[:4] != MAP_MAGIC:
        raise DataError(f"{path}: bad magic, expected RLDM")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    w, h = struct.unpack_from("<II", raw, 4)
    expected = 12 + w * h * channels * 4
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).astype(np.float64)
    if channels == 1:
        return data.reshape(h, w)
    return data.reshape(h, w, channels)


def write_pose(path, pose):
    m = pose.matrix()
    lines = [" ".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    try:
        values = [float(v) for v in text.split()]
    except ValueError as exc:
        raise DataError(f"{path}: invalid pose: {exc}") from exc
    if len(values) != 16:
        raise DataError(f"{path}: pose file must hold 16 numbers, found {len(values)}")
    try:
        return Pose.from_matrix(np.array(values).reshape(4, 4))
    except Exception as exc:
        raise DataError(f"{path}: invalid pose: {exc}") from exc


def write_intrinsics(path, K):
    with open(path, "w") as f:
        json.dump(K.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_intrinsics(path):
    try:
        with open(path) as f:
            return CameraIntrinsics.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{path}: invalid intrinsics: {exc}") from exc


def frame_stem(index):
    return f"frame-{index:06d}"


def write_dataset(out_dir, scene_spec, noise, K, frames):
    """Write a full synthetic dataset (manifest + per-frame files)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_intrinsics(out / "intrinsics.json", K)
    manifest = {
        "scene": scene_spec.to_dict(),
        "noise": noise.to_dict(),
        "n_frames": len(frames),
    }
    with open(out / "scene.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    for i, frame in enumerate(frames):
        stem = frame_stem(i)
        write_map(out / f"{stem}.depth.bin", frame.depths)
        write_pose(out / f"{stem}.pose.txt", frame.pose)
        write_map(out / f"{stem}.coords.bin", frame.pred_coords.coords)
        write_map(out / f"{stem}.gtcoords.bin", frame.gt_coords.coords)


def load_dataset(in_dir):
    """Read a dataset back into (scene_spec, noise, K, list of SyntheticFrame)."""
    root = Path(in_dir)
    K = read_intrinsics(root / "intrinsics.json")
    try:
        with open(root / "scene.json") as f:
            manifest = json.load(f)
        scene_spec = synth.SceneSpec.from_dict(manifest["scene"])
        noise = synth.NoiseSpec.from_dict(manifest["noise"])
        n_frames = manifest["n_frames"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{root / 'scene.json'}: invalid manifest: {exc}") from exc
    frames = []
    for i in range(n_frames):
        stem = frame_stem(i)
        depth = read_map(root / f"{stem}.depth.bin")
        if depth.shape != (K.height, K.width):
            raise DataError(f"{stem}.depth.bin: dimensions do not match intrinsics")
        pose = read_pose(root / f"{stem}.pose.txt")
        pred = read_map(root / f"{stem}.coords.bin", channels=3)
        gt = read_map(root / f"{stem}.gtcoords.bin", channels=3)
        mask = np.isfinite(gt).all(axis=2)
        frames.append(synth.SyntheticFrame(
            pose=pose,
            intrinsics=K,
            depths=depth,
            gt_coords=CoordinateMap(gt, mask),
            pred_coords=CoordinateMap(pred, mask),
            inlier_mask=np.zeros_like(mask),
        ))
    return scene_spec, noise, K, frames


def validate_dataset(in_dir):
    """Check that the directory holds exactly a readable dataset.

    Returns a list of human-readable problems (empty when valid); every
    problem names the offending path.
    """
    root = Path(in_dir)
    problems = []
    if not (root / "intrinsics.json").exists():
        return [f"{root / 'intrinsics.json'}: missing"]
    if not (root / "scene.json").exists():
        return [f"{root / 'scene.json'}: missing"]
    try:
        _, _, K, frames = load_dataset(root)
    except DataError as exc:
        return [str(exc)]
    expected = {"intrinsics.json", "scene.json"}
    for i in range(len(frames)):
        stem = frame_stem(i)
        expected |= {f"{stem}.depth.bin", f"{stem}.pose.txt",
                     f"{stem}.coords.bin", f"{stem}.gtcoords.bin"}
    pattern = re.compile(r"frame-\d{6}\.(depth\.bin|pose\.txt|coords\.bin|gtcoords\.bin)$")
    for path in sorted(root.iterdir()):
        if path.name in expected:
            continue
        if pattern.match(path.name):
            problems.append(f"{path}: frame index outside the manifest range")
    for name in sorted(expected):
        if not (root / name).exists():
            problems.append(f"{root / name}: missing")
    return problems

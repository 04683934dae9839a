"""Pinhole camera model, rigid poses, and pose-error metrics.

Conventions: a Pose maps CAMERA coordinates to SCENE (world) coordinates,
X = R @ x + t. Pixels are continuous; rounding happens only at image
sampling. All types are immutable after construction and all functions
are pure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPose, NonPositiveDepth

ORTHONORMALITY_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidPose(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidPose("principal point must lie inside the image")

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   width=d["width"], height=d["height"])


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform (R, t)."""

    rotation: np.ndarray = field()
    translation: np.ndarray = field()

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMALITY_TOL:
            raise InvalidPose("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise InvalidPose("rotation has negative determinant (reflection)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def inverse(self):
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self):
        """4x4 homogeneous camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])


def rot_x(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation_from_axis_angle(axis, angle_rad):
    """Rodrigues rotation from a unit axis and an angle."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


def random_rotation(rng):
    """Uniform random rotation (QR of a Gaussian matrix, det fixed to +1)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_pose(rng, translation_scale=1.0):
    return Pose(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def camera_to_scene(pose, x):
    """Map camera-frame point(s) x to scene coordinates, X = R x + t."""
    x = np.asarray(x, dtype=np.float64)
    return x @ pose.rotation.T + pose.translation


def scene_to_camera(pose, X):
    """Inverse of camera_to_scene: x = R^T (X - t)."""
    X = np.asarray(X, dtype=np.float64)
    return (X - pose.translation) @ pose.rotation


def project(K, x):
    """Project camera-frame point(s) (x, y, d) to pixel coordinates.

    Raises NonPositiveDepth if any depth is <= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x[..., 2]
    if np.any(d <= 0):
        raise NonPositiveDepth("cannot project points with depth <= 0")
    u = K.fx * x[..., 0] / d + K.cx
    v = K.fy * x[..., 1] / d + K.cy
    return np.stack([u, v], axis=-1)


def backproject(K, p, d):
    """Lift pixel(s) p at depth(s) d back into the camera frame."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepth("cannot backproject with depth <= 0")
    x = (p[..., 0] - K.cx) * d / K.fx
    y = (p[..., 1] - K.cy) * d / K.fy
    return np.stack([x, y, d], axis=-1)


def rotation_error_deg(a, b):
    """Geodesic angle between the two rotations, in degrees.

    Equals arccos(clamp((trace(Ra^T Rb) - 1) / 2, -1, 1)) but evaluated
    through atan2 so small angles are not lost to arccos conditioning.
    """
    rel = a.rotation.T @ b.rotation
    cos_angle = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([rel[2, 1] - rel[1, 2],
                     rel[0, 2] - rel[2, 0],
                     rel[1, 0] - rel[0, 1]])
    sin_angle = 0.5 * np.linalg.norm(axis)
    return float(np.degrees(np.arctan2(sin_angle, cos_angle)))


def translation_error_m(a, b):
    return float(np.linalg.norm(a.translation - b.translation))

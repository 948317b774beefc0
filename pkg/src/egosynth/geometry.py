"""Pose algebra for the 12D camera-configuration representation.

A camera configuration is the row-major flattening of the 3x4 extrinsic
matrix ``[R|t]`` mapping world points into the camera frame
(``X_cam = R X_world + t``).  World frame: x along the baseline, y towards
the half-court line, z up.  Camera frame: x right, y down, z forward.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ValidationError

CONFIG_DIM = 12
ROTATION_TOL = 1e-9
_POLAR_TOL = 1e-12
_POLAR_MAX_ITER = 100


@dataclass(frozen=True)
class Pose:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValidationError(f"bad pose shapes R{R.shape} t{t.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension mean and population std of training configurations."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValidationError("normalizer mean/std must be equal-length vectors")
        if not np.all(std > 0):
            raise ValidationError("normalizer std entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def as_config(v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (CONFIG_DIM,):
        raise ValidationError(f"camera config must have {CONFIG_DIM} entries, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("camera config has non-finite entries")
    return v


def rotation_error(R):
    """Max-abs deviation of ``R^T R`` from identity."""
    R = np.asarray(R, dtype=np.float64)
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def is_rotation(R, tol=ROTATION_TOL):
    R = np.asarray(R, dtype=np.float64)
    return rotation_error(R) < tol and abs(np.linalg.det(R) - 1.0) < tol


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def look_rotation(yaw, pitch):
    """World-to-camera rotation for a head with the given heading and pitch.

    ``yaw`` is the heading of the optical axis in the floor plane measured from
    +x, ``pitch`` is elevation above the floor plane (radians).  No roll.
    """
    cp = np.cos(pitch)
    forward = np.array([cp * np.cos(yaw), cp * np.sin(yaw), np.sin(pitch)])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def optical_axis(R):
    """World-frame viewing direction (third row of the world-to-camera R)."""
    return np.asarray(R)[2].copy()


def flatten_pose(pose):
    if not is_rotation(pose.R):
        raise ValidationError("pose rotation is not orthonormal with det +1")
    return np.hstack([pose.R, pose.t[:, None]]).reshape(CONFIG_DIM)


def orthonormalize_rotation(M):
    """Nearest rotation matrix to ``M`` (polar factor with a det sign fix).

    Uses the Newton iteration ``M <- (M + M^-T) / 2``, which converges
    quadratically to the orthogonal polar factor.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (3, 3) or not np.all(np.isfinite(M)):
        raise DegeneracyError("rotation block must be a finite 3x3 matrix")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegeneracyError("rotation block is singular")

    X = M
    for _ in range(_POLAR_MAX_ITER):
        X_next = 0.5 * (X + np.linalg.inv(X).T)
        delta = np.max(np.abs(X_next - X))
        X = X_next
        if delta < _POLAR_TOL:
            break
    if np.linalg.det(X) < 0:
        # closest proper rotation flips the axis of the smallest singular value
        U, _, Vt = np.linalg.svd(M)
        D = np.diag([1.0, 1.0, -1.0])
        if np.linalg.det(U @ Vt) > 0:
            D = np.eye(3)
        X = U @ D @ Vt
    return X


def decompose(config, strict=True):
    v = as_config(config)
    P = v.reshape(3, 4)
    R, t = P[:, :3].copy(), P[:, 3].copy()
    if not is_rotation(R):
        if strict:
            raise ValidationError(
                f"rotation block is not a rotation (||R^T R - I||_max = {rotation_error(R):.3g})"
            )
        R = orthonormalize_rotation(R)
    return Pose(R, t)


def camera_center(config):
    pose = decompose(config, strict=False)
    return -pose.R.T @ pose.t


def court_projection(config):
    return camera_center(config)[:2]


def fit_normalizer(configs):
    X = np.asarray(configs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("cannot fit a normalizer on an empty set")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return Normalizer(mean, std)


def normalize(config, normalizer):
    return (np.asarray(config, dtype=np.float64) - normalizer.mean) / normalizer.std


def denormalize(config, normalizer):
    return np.asarray(config, dtype=np.float64) * normalizer.std + normalizer.mean


def orthonormalize_config(config):
    """Return ``config`` with its rotation block replaced by the nearest rotation."""
    pose = decompose(config, strict=False)
    return flatten_pose(pose)

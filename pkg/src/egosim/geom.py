"""Camera and rotation geometry.

Axis-angle rotations (Rodrigues form with a small-angle series branch),
rotation-only camera extrinsics derived from head orientation, per-pixel
Plücker ray maps, and pinhole projection.

Conventions:
    * world point X maps to camera coordinates ``x = R @ X + t``
    * pixel (row i, col j) casts a ray through (j + 0.5, i + 0.5) so the
      ray fan is symmetric about the principal point
    * Plücker rays carry world-frame unit direction d and moment m = c x d,
      c being the camera center ``-R^T t``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PreconditionError

# Below this rotation angle the normalized Rodrigues form divides ~0 by ~0;
# switch to the second-order series in the unnormalized axis-angle vector.
SMALL_ANGLE = 1e-8

DEFAULT_Z_NEAR = 1e-6


def cross_matrix(u: np.ndarray) -> np.ndarray:
    """Cross-product (skew-symmetric) matrix of a unit 3-vector."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (3,):
        raise DimensionError(f"expected a 3-vector, got shape {u.shape}")
    norm = np.linalg.norm(u)
    if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
        raise PreconditionError(f"cross_matrix requires a unit vector, |u| = {norm}")
    return np.array(
        [
            [0.0, -u[2], u[1]],
            [u[2], 0.0, -u[0]],
            [-u[1], u[0], 0.0],
        ]
    )


def _skew_unchecked(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def axis_angle_to_rotation(v: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (axis * angle, radians).

    Uses R = I + sin(theta) [u]x + (1 - cos(theta)) [u]x^2 with u = v/|v|;
    for |v| < SMALL_ANGLE falls back to I + [v]x + 0.5 [v]x^2, which agrees
    to O(theta^3) and avoids the 0/0 normalization.
    """
    v = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise PreconditionError("axis-angle vector must be finite")
    theta = float(np.linalg.norm(v))
    if theta < SMALL_ANGLE:
        k = _skew_unchecked(v)
        return np.eye(3) + k + 0.5 * (k @ k)
    u = v / theta
    k = _skew_unchecked(u)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_sequence(vs: np.ndarray) -> np.ndarray:
    """Stack of rotation matrices for an (n, 3) array of axis-angle vectors."""
    vs = np.asarray(vs, dtype=np.float64)
    if vs.ndim != 2 or vs.shape[1] != 3:
        raise DimensionError(f"expected (n, 3) axis-angle array, got {vs.shape}")
    return np.stack([axis_angle_to_rotation(v) for v in vs])


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    """True if r is orthonormal with determinant +1 within tol."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        return False
    return (
        np.max(np.abs(r.T @ r - np.eye(3))) <= tol
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera extrinsics: x_cam = r @ X_world + t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {r.shape}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.r.T @ self.t

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.r.T + self.t


def head_to_pose(head: np.ndarray) -> CameraPose:
    """Rotation-only extrinsics from a head axis-angle; translation is zeroed."""
    return CameraPose(r=axis_angle_to_rotation(head), t=np.zeros(3))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise PreconditionError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise PreconditionError("principal point must lie inside the image")

    def scaled(self, new_width: int, new_height: int) -> "Intrinsics":
        """Intrinsics for the same view rendered at a different resolution."""
        sx = new_width / self.width
        sy = new_height / self.height
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=new_width,
            height=new_height,
        )


def default_intrinsics(size: int = 64) -> Intrinsics:
    """Square synthetic camera: fx = fy = width = height, centered."""
    return Intrinsics(fx=float(size), fy=float(size), cx=size / 2.0, cy=size / 2.0,
                      width=size, height=size)


def plucker_map(pose: CameraPose, intr: Intrinsics) -> np.ndarray:
    """Per-pixel Plücker ray map, shape (H, W, 6).

    Channels 0..2 hold the world-frame unit ray direction through each pixel
    center, channels 3..5 the moment m = c x d. Rotation-only poses have
    c = 0, making the moment channels exactly zero.
    """
    h, w = intr.height, intr.width
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (jj + 0.5 - intr.cx) / intr.fx
    y = (ii + 0.5 - intr.cy) / intr.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    dirs_world = dirs_cam @ pose.r  # (R^T d^T)^T
    dirs_world /= np.linalg.norm(dirs_world, axis=-1, keepdims=True)
    center = pose.center()
    if np.all(center == 0.0):
        moments = np.zeros_like(dirs_world)
    else:
        moments = np.cross(np.broadcast_to(center, dirs_world.shape), dirs_world)
    return np.concatenate([dirs_world, moments], axis=-1)


def plucker_sequence(heads: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Ray maps for a (k, 3) head-parameter sequence, shape (k, H, W, 6)."""
    heads = np.asarray(heads, dtype=np.float64)
    return np.stack([plucker_map(head_to_pose(h), intr) for h in heads])


def project_joints(
    joints3d: np.ndarray,
    intr: Intrinsics,
    z_near: float = DEFAULT_Z_NEAR,
) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole-project camera-frame points to pixels.

    Returns (uv, visible): uv is (N, 2) pixel coordinates, visible is a
    boolean mask, False where the depth is at or behind z_near. Pixel values
    for invisible points are computed against a clamped depth and should be
    ignored.
    """
    pts = np.asarray(joints3d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"expected (n, 3) points, got {pts.shape}")
    z = pts[:, 2]
    visible = z > z_near
    safe_z = np.where(visible, z, 1.0)
    u = intr.fx * pts[:, 0] / safe_z + intr.cx
    v = intr.fy * pts[:, 1] / safe_z + intr.cy
    return np.stack([u, v], axis=-1), visible

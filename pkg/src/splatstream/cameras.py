"""Pinhole cameras and the world-to-screen projection used by the renderer.

Convention: camera x points right, y points down, z points forward, so a
point p_cam = R p_world + t with p_cam[2] > 0 lies in front of the camera.
Pixel coordinates put (0, 0) at the center of the top-left pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "Camera",
    "look_at",
    "project_points",
    "projection_jacobian",
    "project_covariance",
    "LOWPASS_PX2",
]

# Screen-space blur floor in px^2 added to projected covariance diagonals;
# guarantees sub-pixel splats still cover ~a pixel and keeps the 2x2 invertible.
LOWPASS_PX2 = 0.3


@dataclass(frozen=True)
class Camera:
    """A calibrated pinhole camera.

    `world_to_camera` is the 4x4 row-major rigid transform; fx, fy, cx, cy
    are intrinsics in pixels for an image of `width` x `height` pixels.
    Gaussians at camera depth <= near_clip are culled, not an error.
    """

    world_to_camera: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near_clip: float = 0.01

    def __post_init__(self) -> None:
        w2c = np.ascontiguousarray(self.world_to_camera, dtype=np.float64)
        if w2c.shape != (4, 4):
            raise DataError(f"world_to_camera must be 4x4, got {w2c.shape}")
        if not np.allclose(w2c[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise DataError("world_to_camera bottom row must be [0, 0, 0, 1]")
        rot = w2c[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise DataError("world_to_camera rotation block is not orthonormal")
        object.__setattr__(self, "world_to_camera", w2c)
        if self.width <= 0 or self.height <= 0:
            raise DataError("camera image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if self.near_clip <= 0:
            raise DataError("near_clip must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates: -R^T t."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        points_world = np.asarray(points_world, dtype=np.float64)
        return points_world @ self.rotation.T + self.translation


def look_at(
    eye: np.ndarray,
    target: np.ndarray,
    up: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
    near_clip: float = 0.01,
) -> Camera:
    """Camera at `eye` looking toward `target` with `up` fixing the roll.

    `up` should point toward the top of the image in world space; it maps to
    camera -y because image y grows downward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    z_c = target - eye
    nz = np.linalg.norm(z_c)
    if nz < 1e-12:
        raise DataError("look_at eye and target coincide")
    z_c = z_c / nz
    x_c = np.cross(z_c, up)
    nx = np.linalg.norm(x_c)
    if nx < 1e-12:
        raise DataError("look_at up direction is parallel to the view direction")
    x_c = x_c / nx
    y_c = np.cross(z_c, x_c)

    rot = np.stack([x_c, y_c, z_c], axis=0)
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    return Camera(
        world_to_camera=w2c,
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        width=width,
        height=height,
        near_clip=near_clip,
    )


def project_points(
    camera: Camera, points_world: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project world points to pixel coordinates.

    Returns (pix (..., 2), depth (...,)). Entries with depth <= near_clip
    are culled by the caller; their pixel values are meaningless.
    """
    p_cam = camera.to_camera(points_world)
    z = p_cam[..., 2]
    z_safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
    u = camera.fx * p_cam[..., 0] / z_safe + camera.cx
    v = camera.fy * p_cam[..., 1] / z_safe + camera.cy
    return np.stack([u, v], axis=-1), z


def projection_jacobian(camera: Camera, p_cam: np.ndarray) -> np.ndarray:
    """d(pixel)/d(camera point) for camera-space points (..., 3) -> (..., 2, 3)."""
    p_cam = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    z_safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
    zero = np.zeros_like(x)
    row0 = np.stack(
        [camera.fx / z_safe, zero, -camera.fx * x / (z_safe * z_safe)], axis=-1
    )
    row1 = np.stack(
        [zero, camera.fy / z_safe, -camera.fy * y / (z_safe * z_safe)], axis=-1
    )
    return np.stack([row0, row1], axis=-2)


def project_covariance(
    camera: Camera, cov3d: np.ndarray, p_cam: np.ndarray
) -> np.ndarray:
    """Screen-space 2x2 covariance via the local-affine approximation.

    Computes J R_w Sigma R_w^T J^T (J at the camera-space point, R_w the
    camera rotation, Sigma in world space), i.e. the upper-left 2x2 of the
    full projected covariance, then adds the LOWPASS_PX2 diagonal floor.
    """
    jac = projection_jacobian(camera, p_cam)
    m = jac @ camera.rotation
    cov2d = np.einsum("...ij,...jk,...lk->...il", m, np.asarray(cov3d, dtype=np.float64), m)
    cov2d = cov2d.copy()
    cov2d[..., 0, 0] += LOWPASS_PX2
    cov2d[..., 1, 1] += LOWPASS_PX2
    return cov2d

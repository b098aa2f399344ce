"""Anisotropic 3D Gaussian primitives and quaternion utilities.

A Gaussian is parameterized by a mean, a unit quaternion (w, x, y, z), a
per-axis log scale, an opacity logit, and degree-1 spherical harmonic
coefficients for color. The covariance is Sigma = R S S^T R^T with
S = diag(exp(log_scales)), which keeps Sigma positive semi-definite under
unconstrained optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = [
    "GaussianCloud",
    "quat_normalize",
    "quat_multiply",
    "quat_to_rotation_matrix",
    "rotation_matrix_quat_jacobian",
    "quat_normalize_jacobian",
    "covariance_from_rotation_scale",
    "covariance_backward",
    "evaluate_gaussian",
    "sigmoid",
    "inverse_sigmoid",
]


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def quat_normalize(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Normalize quaternions of shape (..., 4); raises on near-zero norm."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < eps):
        raise NumericalError("cannot normalize near-zero quaternion")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for (..., 4) arrays in (w, x, y, z) order."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_rotation_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4).

    Input must already be normalized; no normalization happens here so the
    formula stays polynomial (convenient for analytic differentiation).
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1
    )
    row1 = np.stack(
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1
    )
    row2 = np.stack(
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1
    )
    return np.stack([row0, row1, row2], axis=-2)


def rotation_matrix_quat_jacobian(q: np.ndarray) -> np.ndarray:
    """dR/dq as a (..., 4, 3, 3) tensor, component k giving dR/dq_k.

    Valid for the polynomial map in `quat_to_rotation_matrix`, i.e. treats q
    as free (not constrained to unit norm). Chain with
    `quat_normalize_jacobian` when the quaternion passed in was normalized.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    d_w = mat([[zero, -2 * z, 2 * y], [2 * z, zero, -2 * x], [-2 * y, 2 * x, zero]])
    d_x = mat([[zero, 2 * y, 2 * z], [2 * y, -4 * x, -2 * w], [2 * z, 2 * w, -4 * x]])
    d_y = mat([[-4 * y, 2 * x, 2 * w], [2 * x, zero, 2 * z], [-2 * w, 2 * z, -4 * y]])
    d_z = mat([[-4 * z, -2 * w, 2 * x], [2 * w, -4 * z, 2 * y], [2 * x, 2 * y, zero]])
    return np.stack([d_w, d_x, d_y, d_z], axis=-3)


def quat_normalize_jacobian(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Jacobian d(q/|q|)/dq of shape (..., 4, 4): (I - u u^T) / |q|."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < eps):
        raise NumericalError("cannot normalize near-zero quaternion")
    u = q / norm
    eye = np.eye(4)
    return (eye - u[..., :, None] * u[..., None, :]) / norm[..., None]


def covariance_from_rotation_scale(q: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Sigma = R diag(exp(2*log_s)) R^T for unit quaternions q."""
    rot = quat_to_rotation_matrix(q)
    var = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    return np.einsum("...ij,...j,...kj->...ik", rot, var, rot)


def covariance_backward(
    q: np.ndarray, log_scales: np.ndarray, grad_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop dL/dSigma to (dL/dq_raw, dL/dlog_scales).

    `q` is the raw (pre-normalization) quaternion the caller optimizes; the
    forward path is assumed to be Sigma(normalize(q), log_scales).
    """
    q = np.asarray(q, dtype=np.float64)
    log_scales = np.asarray(log_scales, dtype=np.float64)
    grad_cov = np.asarray(grad_cov, dtype=np.float64)

    q_unit = quat_normalize(q)
    rot = quat_to_rotation_matrix(q_unit)
    var = np.exp(2.0 * log_scales)

    # Sigma = R D R^T:  dL/dR = (G + G^T) R D,  dL/dD_ii = (R^T G R)_ii.
    g_sym = grad_cov + np.swapaxes(grad_cov, -1, -2)
    grad_rot = np.einsum("...ij,...jk,...k->...ik", g_sym, rot, var)
    rtgr = np.einsum("...ji,...jk,...kl->...il", rot, grad_cov, rot)
    diag = np.einsum("...ii->...i", rtgr)
    grad_log_scales = diag * 2.0 * var

    drdq = rotation_matrix_quat_jacobian(q_unit)
    grad_q_unit = np.einsum("...ij,...kij->...k", grad_rot, drdq)
    jac = quat_normalize_jacobian(q)
    grad_q = np.einsum("...i,...ij->...j", grad_q_unit, jac)
    return grad_q, grad_log_scales


def evaluate_gaussian(
    mean: np.ndarray, cov: np.ndarray, points: np.ndarray, eps: float = 1e-12
) -> np.ndarray:
    """Unnormalized density exp(-0.5 (p-mu)^T Sigma^-1 (p-mu)) at `points`.

    Works for 2D or 3D Gaussians; `points` has shape (..., d). Raises
    NumericalError when Sigma is singular within `eps`.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    det = np.linalg.det(cov)
    if np.any(np.abs(det) < eps):
        raise NumericalError("degenerate covariance in evaluate_gaussian")
    diff = points - mean
    sol = np.linalg.solve(
        np.broadcast_to(cov, diff.shape[:-1] + cov.shape[-2:]), diff[..., None]
    )[..., 0]
    maha = np.einsum("...i,...i->...", diff, sol)
    return np.exp(-0.5 * maha)


@dataclass
class GaussianCloud:
    """Struct-of-arrays container for N Gaussians.

    Fields hold raw (pre-activation) parameters: scales are log-space,
    opacities are logits, quaternions may be unnormalized. `sh` stores
    degree-1 coefficients as (N, 4, 3): row 0 is the DC term, rows 1..3 are
    the linear terms in basis order (y, z, x).
    """

    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    def __post_init__(self) -> None:
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64)
        self.opacity_logits = np.ascontiguousarray(
            self.opacity_logits, dtype=np.float64
        )
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        n = len(self.means)
        if self.means.shape != (n, 3):
            raise ValueError(f"means must be (N, 3), got {self.means.shape}")
        if self.rotations.shape != (n, 4):
            raise ValueError(f"rotations must be (N, 4), got {self.rotations.shape}")
        if self.log_scales.shape != (n, 3):
            raise ValueError(f"log_scales must be (N, 3), got {self.log_scales.shape}")
        if self.opacity_logits.shape != (n,):
            raise ValueError(
                f"opacity_logits must be (N,), got {self.opacity_logits.shape}"
            )
        if self.sh.shape != (n, 4, 3):
            raise ValueError(f"sh must be (N, 4, 3), got {self.sh.shape}")

    def __len__(self) -> int:
        return len(self.means)

    @property
    def opacities(self) -> np.ndarray:
        """Activated opacities in (0, 1)."""
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        """Activated per-axis scales (standard deviations)."""
        return np.exp(self.log_scales)

    def unit_rotations(self) -> np.ndarray:
        return quat_normalize(self.rotations)

    def covariances(self) -> np.ndarray:
        """World-space covariances (N, 3, 3)."""
        return covariance_from_rotation_scale(self.unit_rotations(), self.log_scales)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
        )

    def select(self, mask_or_indices: np.ndarray) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means[mask_or_indices],
            rotations=self.rotations[mask_or_indices],
            log_scales=self.log_scales[mask_or_indices],
            opacity_logits=self.opacity_logits[mask_or_indices],
            sh=self.sh[mask_or_indices],
        )

    @staticmethod
    def concatenate(a: "GaussianCloud", b: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(
            means=np.concatenate([a.means, b.means]),
            rotations=np.concatenate([a.rotations, b.rotations]),
            log_scales=np.concatenate([a.log_scales, b.log_scales]),
            opacity_logits=np.concatenate([a.opacity_logits, b.opacity_logits]),
            sh=np.concatenate([a.sh, b.sh]),
        )

    @staticmethod
    def empty() -> "GaussianCloud":
        return GaussianCloud(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            opacity_logits=np.zeros((0,)),
            sh=np.zeros((0, 4, 3)),
        )

    def quantize_float32(self) -> "GaussianCloud":
        """Round-trip all parameters through float32.

        Applied at every serialization boundary so that a live pipeline and a
        stream replay see bit-identical parameters.
        """
        return GaussianCloud(
            means=self.means.astype(np.float32).astype(np.float64),
            rotations=self.rotations.astype(np.float32).astype(np.float64),
            log_scales=self.log_scales.astype(np.float32).astype(np.float64),
            opacity_logits=self.opacity_logits.astype(np.float32).astype(np.float64),
            sh=self.sh.astype(np.float32).astype(np.float64),
        )

"""Degree-1 real spherical harmonics: color evaluation and rotation.

Coefficient layout per channel: index 0 is the degree-0 (DC) term, indices
1..3 are the degree-1 terms for basis functions (C1*y, C1*z, C1*x) of the
unit view direction, in that order. Colors are 0.5 + sum(basis * coeffs),
clipped to [0, 1].
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

__all__ = [
    "SH_C0",
    "SH_C1",
    "sh_basis",
    "project_direction",
    "evaluate_colors",
    "colors_backward",
    "sh_rotation_matrix",
    "sh_rotation_backward",
]

SH_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
SH_C1 = 0.4886025119029199  # sqrt(3 / (4 pi))

# Degree-1 basis order (y, z, x) as a permutation of direction components.
_PERM = np.array(
    [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], dtype=np.float64
)


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Basis values (..., 4) = [C0, C1*y, C1*z, C1*x] at unit directions."""
    dirs = np.asarray(dirs, dtype=np.float64)
    c0 = np.full(dirs.shape[:-1], SH_C0)
    return np.stack(
        [c0, SH_C1 * dirs[..., 1], SH_C1 * dirs[..., 2], SH_C1 * dirs[..., 0]],
        axis=-1,
    )


def project_direction(n: np.ndarray) -> np.ndarray:
    """Degree-1 coefficients (..., 3) of a unit direction: C1*(y, z, x)."""
    n = np.asarray(n, dtype=np.float64)
    return SH_C1 * (n @ _PERM.T)


def evaluate_colors(sh: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """View-dependent RGB from (N, 4, 3) coefficients and (N, 3) unit dirs.

    Returns (colors clipped to [0,1], raw pre-clip values); the raw values
    are needed by the backward pass to mask out saturated channels.
    """
    basis = sh_basis(dirs)
    raw = 0.5 + np.einsum("...k,...kc->...c", basis, np.asarray(sh, dtype=np.float64))
    return np.clip(raw, 0.0, 1.0), raw


def colors_backward(
    sh: np.ndarray, dirs: np.ndarray, raw: np.ndarray, grad_colors: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop through evaluate_colors.

    Returns (grad_sh (N, 4, 3), grad_dirs (N, 3)); channels clipped at 0 or 1
    in the forward pass receive zero gradient.
    """
    sh = np.asarray(sh, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    basis = sh_basis(dirs)
    interior = (raw > 0.0) & (raw < 1.0)
    g = np.asarray(grad_colors, dtype=np.float64) * interior
    grad_sh = basis[..., :, None] * g[..., None, :]
    grad_basis = np.einsum("...kc,...c->...k", sh, g)
    grad_dirs = np.zeros_like(dirs)
    grad_dirs[..., 1] = SH_C1 * grad_basis[..., 1]
    grad_dirs[..., 2] = SH_C1 * grad_basis[..., 2]
    grad_dirs[..., 0] = SH_C1 * grad_basis[..., 3]
    return grad_sh, grad_dirs


def sh_rotation_matrix(rot: np.ndarray) -> np.ndarray:
    """3x3 matrix M acting on degree-1 coefficients so that rotating a
    direction then projecting equals projecting then applying M.

    Built as M = [P(R e_x), P(R e_y), P(R e_z)] A^{-1} with A the projection
    of the canonical axes; M is orthogonal and M(R1 R2) = M(R1) M(R2). The
    DC coefficient is rotation-invariant and untouched by M.
    """
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape != (3, 3):
        raise NumericalError(f"rotation must be 3x3, got {rot.shape}")
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
        raise NumericalError("sh_rotation_matrix requires a proper rotation")
    axes = np.eye(3)
    a = project_direction(axes).T  # columns P(e_x), P(e_y), P(e_z)
    b = project_direction((rot @ axes.T).T).T  # columns P(R e_i)
    return np.linalg.solve(a.T, b.T).T  # B A^{-1} without forming the inverse


def sh_rotation_backward(grad_m: np.ndarray) -> np.ndarray:
    """dL/dR given dL/dM.

    With a linear projection, M = P_m R P_m^T for the basis permutation P_m,
    so the adjoint is the reverse conjugation.
    """
    return _PERM.T @ np.asarray(grad_m, dtype=np.float64) @ _PERM

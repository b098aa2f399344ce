"""Applies transformation-cache outputs to a Gaussian cloud.

Per Gaussian: mean shifted by d_mu, orientation composed with the cache
rotation in the world frame (R' = R(dq) R(q)), and the degree-1 SH
coefficients rotated by the same incremental rotation so view-dependent
color follows the Gaussian. Scales and opacities pass through untouched.
The backward pass routes image gradients into the cache parameters; the
cloud itself is frozen during stage-1 training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import (
    GaussianCloud,
    quat_multiply,
    quat_normalize,
    quat_normalize_jacobian,
    quat_to_rotation_matrix,
    rotation_matrix_quat_jacobian,
)
from .ntc import ForwardContext, NeuralTransformationCache
from .sh import sh_rotation_backward, sh_rotation_matrix

__all__ = ["TransformContext", "apply_ntc", "apply_ntc_backward"]


@dataclass
class TransformContext:
    cache: NeuralTransformationCache
    fwd: ForwardContext
    inside: np.ndarray  # indices of transformed Gaussians
    d_q_raw: np.ndarray  # (M, 4) cache output
    d_q_unit: np.ndarray  # (M, 4) normalized
    q_src: np.ndarray  # (M, 4) source orientation as stored (may be unnormalized)
    sh_in: np.ndarray  # (M, 3, 3) source degree-1 coefficients
    rotate_sh: bool


def _quat_right_multiply_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix A(q) with A(q) p = p (x) q, so d(p (x) q)/dp = A(q)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([w, -x, -y, -z], axis=-1)
    row1 = np.stack([x, w, z, -y], axis=-1)
    row2 = np.stack([y, -z, w, x], axis=-1)
    row3 = np.stack([z, y, -x, w], axis=-1)
    return np.stack([row0, row1, row2, row3], axis=-2)


def apply_ntc(
    cloud: GaussianCloud,
    cache: NeuralTransformationCache,
    rotate_sh: bool = True,
    encode_ctx=None,
) -> tuple[GaussianCloud, TransformContext]:
    """Transformed copy of the cloud plus the context for backward.

    Means outside the cache's bounding box are passed through unchanged.
    Raises on a zero-norm output quaternion.
    """
    lo = np.asarray(cache.grid.aabb_min)
    hi = np.asarray(cache.grid.aabb_max)
    inside = np.flatnonzero(
        np.all((cloud.means >= lo) & (cloud.means <= hi), axis=1)
    )

    d_mu, d_q, fwd = cache.forward(cloud.means[inside], encode_ctx=encode_ctx)
    d_q_unit = quat_normalize(d_q) if len(inside) else d_q.copy()
    # composing with the raw source quaternion keeps the identity transform
    # bit-exact; the represented rotation is unchanged because quaternion
    # norms are multiplicative and consumers normalize
    q_src = cloud.rotations[inside]

    out = cloud.copy()
    out.means[inside] += d_mu
    out.rotations[inside] = quat_multiply(d_q_unit, q_src)
    sh_in = cloud.sh[inside, 1:, :].copy()
    if rotate_sh and len(inside):
        rots = quat_to_rotation_matrix(d_q_unit)
        ms = np.stack([sh_rotation_matrix(r) for r in rots])
        out.sh[inside, 1:, :] = ms @ sh_in

    ctx = TransformContext(
        cache=cache,
        fwd=fwd,
        inside=inside,
        d_q_raw=d_q,
        d_q_unit=d_q_unit,
        q_src=q_src,
        sh_in=sh_in,
        rotate_sh=rotate_sh,
    )
    return out, ctx


def apply_ntc_backward(
    ctx: TransformContext,
    d_means_t: np.ndarray,
    d_rotations_t: np.ndarray,
    d_sh_t: np.ndarray,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Cache-parameter gradients from gradients on the transformed cloud.

    Inputs are dL/d(means'), dL/d(rotations'), dL/d(sh') over the full
    transformed cloud; only the rows the cache actually moved contribute.
    Returns the (grads, touched) pair for the cache's Adam step.
    """
    inside = ctx.inside
    grad_d_mu = np.asarray(d_means_t, dtype=np.float64)[inside]

    # rotation composition q' = dq_unit (x) q_unit is linear in dq_unit
    a = _quat_right_multiply_matrix(ctx.q_src)
    grad_dq_unit = np.einsum(
        "nij,ni->nj", a, np.asarray(d_rotations_t, dtype=np.float64)[inside]
    )

    if ctx.rotate_sh and len(inside):
        # sh'[1:] = M sh[1:]: dL/dM = g_sh' sh^T, then back through the
        # basis conjugation and the quaternion-to-matrix map
        g_rows = np.asarray(d_sh_t, dtype=np.float64)[inside, 1:, :]
        g_m = np.einsum("nic,njc->nij", g_rows, ctx.sh_in)
        g_r = np.stack([sh_rotation_backward(g) for g in g_m])
        drdq = rotation_matrix_quat_jacobian(ctx.d_q_unit)
        grad_dq_unit += np.einsum("nij,nkij->nk", g_r, drdq)

    jac = quat_normalize_jacobian(ctx.d_q_raw) if len(inside) else None
    grad_d_q = (
        np.einsum("ni,nij->nj", grad_dq_unit, jac)
        if len(inside)
        else np.zeros((0, 4))
    )
    return ctx.cache.backward(ctx.fwd, grad_d_mu, grad_d_q)

"""Tile-based splatting of 3D Gaussians with an analytic backward pass.

Forward: project every Gaussian to a screen-space ellipse, bin ellipses into
tiles, then alpha-blend front to back per pixel. Backward: hand-derived
adjoint of the whole chain (blending -> 2D Gaussian -> projection ->
world covariance / SH color), producing gradients for every raw cloud
parameter plus the per-Gaussian view-space positional gradient statistic the
densification logic consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import Camera, project_covariance, project_points, projection_jacobian
from .errors import DataError
from .gaussians import GaussianCloud, covariance_backward, sigmoid
from .sh import colors_backward, evaluate_colors

__all__ = [
    "RasterSettings",
    "RenderOutput",
    "GradientBuffer",
    "RenderContext",
    "tile_bin",
    "rasterize_forward",
    "rasterize_backward",
]


@dataclass(frozen=True)
class RasterSettings:
    tile_size: int = 16
    alpha_clamp: float = 0.99
    skip_alpha: float = 1.0 / 255.0
    stop_transmittance: float = 1e-4


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    alpha_map: np.ndarray  # (H, W) accumulated opacity
    per_gaussian_touch_count: np.ndarray  # (N,) pixels each Gaussian colored


@dataclass
class GradientBuffer:
    d_means: np.ndarray
    d_rotations: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_sh: np.ndarray
    viewspace_grad_norm: np.ndarray  # (N,) |dL/d mean2d| for this view
    contributed: np.ndarray  # (N,) bool, touched at least one pixel

    @staticmethod
    def zeros(n: int) -> "GradientBuffer":
        return GradientBuffer(
            d_means=np.zeros((n, 3)),
            d_rotations=np.zeros((n, 4)),
            d_log_scales=np.zeros((n, 3)),
            d_opacity_logits=np.zeros(n),
            d_sh=np.zeros((n, 4, 3)),
            viewspace_grad_norm=np.zeros(n),
            contributed=np.zeros(n, dtype=bool),
        )


@dataclass
class RenderContext:
    """Everything the backward pass needs, saved by the forward pass."""

    cloud: GaussianCloud
    camera: Camera
    settings: RasterSettings
    background: np.ndarray
    indices: np.ndarray  # survivors of culling, depth-sorted (index into cloud)
    p_cam: np.ndarray  # (M, 3) camera-space means
    mean2d: np.ndarray  # (M, 2)
    cov2d: np.ndarray  # (M, 2, 2) floored
    conic: np.ndarray  # (M, 2, 2) inverse of cov2d
    cov3d: np.ndarray  # (M, 3, 3)
    colors: np.ndarray  # (M, 3) clipped view colors
    raw_colors: np.ndarray  # (M, 3) pre-clip
    dirs: np.ndarray  # (M, 3) unit view directions
    dist: np.ndarray  # (M,) distance camera -> mean
    opacity: np.ndarray  # (M,) activated
    tiles: list = field(default_factory=list)  # (y0, y1, x0, x1, member idx array)


def _invert_2x2(m: np.ndarray) -> np.ndarray:
    a = m[..., 0, 0]
    b = m[..., 0, 1]
    c = m[..., 1, 0]
    d = m[..., 1, 1]
    det = a * d - b * c
    inv = np.empty_like(m)
    inv[..., 0, 0] = d
    inv[..., 0, 1] = -b
    inv[..., 1, 0] = -c
    inv[..., 1, 1] = a
    return inv / det[..., None, None]


def tile_bin(
    mean2d: np.ndarray,
    cov2d: np.ndarray,
    opacity: np.ndarray,
    width: int,
    height: int,
    tile_size: int,
    skip_alpha: float = 1.0 / 255.0,
) -> list:
    """Assign each splat to the tiles its screen ellipse can touch.

    The footprint must cover at least the 3-sigma ellipse and, so that tiled
    and untiled rendering agree exactly, every pixel whose contribution
    survives the skip threshold: alpha >= skip solves to a Mahalanobis bound
    2*ln(opacity/skip). The axis-aligned half-extent of {m(d) <= r^2} is
    r*sqrt(cov_diag). A zero skip threshold disables the cutoff entirely and
    every on-screen splat lands in every tile. Inputs are assumed
    depth-sorted, so each tile's member list stays depth-sorted. Returns
    [(y0, y1, x0, x1, members)] for non-empty tiles.
    """
    n = len(mean2d)
    ntx = (width + tile_size - 1) // tile_size
    nty = (height + tile_size - 1) // tile_size
    buckets: dict[tuple[int, int], list[int]] = {}
    if n:
        if skip_alpha > 0.0:
            ratio = np.maximum(np.asarray(opacity, dtype=np.float64) / skip_alpha, 1.0)
            maha_max = np.maximum(9.0, 2.0 * np.log(ratio))
            r = np.sqrt(maha_max)
            hx = r * np.sqrt(np.maximum(cov2d[:, 0, 0], 0.0))
            hy = r * np.sqrt(np.maximum(cov2d[:, 1, 1], 0.0))
            x_lo = mean2d[:, 0] - hx
            x_hi = mean2d[:, 0] + hx
            y_lo = mean2d[:, 1] - hy
            y_hi = mean2d[:, 1] + hy
            tx0 = np.clip(np.floor(x_lo).astype(int) // tile_size, 0, ntx - 1)
            tx1 = np.clip(np.floor(x_hi).astype(int) // tile_size, 0, ntx - 1)
            ty0 = np.clip(np.floor(y_lo).astype(int) // tile_size, 0, nty - 1)
            ty1 = np.clip(np.floor(y_hi).astype(int) // tile_size, 0, nty - 1)
            off_screen = (
                (x_hi < 0) | (x_lo > width - 1) | (y_hi < 0) | (y_lo > height - 1)
            )
        else:
            tx0 = np.zeros(n, dtype=int)
            ty0 = np.zeros(n, dtype=int)
            tx1 = np.full(n, ntx - 1, dtype=int)
            ty1 = np.full(n, nty - 1, dtype=int)
            off_screen = np.zeros(n, dtype=bool)
        for i in range(n):
            if off_screen[i]:
                continue
            for ty in range(ty0[i], ty1[i] + 1):
                for tx in range(tx0[i], tx1[i] + 1):
                    buckets.setdefault((ty, tx), []).append(i)

    tiles = []
    for (ty, tx), members in sorted(buckets.items()):
        y0 = ty * tile_size
        x0 = tx * tile_size
        tiles.append(
            (
                y0,
                min(y0 + tile_size, height),
                x0,
                min(x0 + tile_size, width),
                np.asarray(members, dtype=np.intp),
            )
        )
    return tiles


def _tile_alpha_transmittance(ctx: RenderContext, tile) -> tuple:
    """Shared forward math for one tile.

    Returns (members, d (P,K,2), alpha (P,K), t_before (P,K), alive (P,K),
    t_final (P,)) with alpha already clamp/skip-processed and P the pixel
    count of the tile in row-major order.
    """
    y0, y1, x0, x1, members = tile
    s = ctx.settings
    ys, xs = np.mgrid[y0:y1, x0:x1]
    centers = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)

    d = centers[:, None, :] - ctx.mean2d[members][None, :, :]
    con = ctx.conic[members]
    maha = (
        con[None, :, 0, 0] * d[..., 0] ** 2
        + (con[None, :, 0, 1] + con[None, :, 1, 0]) * d[..., 0] * d[..., 1]
        + con[None, :, 1, 1] * d[..., 1] ** 2
    )
    g = np.exp(-0.5 * maha)
    alpha = np.minimum(s.alpha_clamp, ctx.opacity[members][None, :] * g)
    alpha = np.where(alpha < s.skip_alpha, 0.0, alpha)

    one_minus = 1.0 - alpha
    t_all = np.concatenate(
        [np.ones((alpha.shape[0], 1)), np.cumprod(one_minus, axis=1)], axis=1
    )
    t_before = t_all[:, :-1]
    alive = t_before >= s.stop_transmittance
    # transmittance left for the background: value at the first dead slot,
    # or the full product if blending ran through every splat
    stop_idx = alive.sum(axis=1)
    t_final = t_all[np.arange(alpha.shape[0]), stop_idx]
    return members, d, g, alpha, t_before, alive, t_final


def rasterize_forward(
    cloud: GaussianCloud,
    camera: Camera,
    background: np.ndarray | None = None,
    settings: RasterSettings = RasterSettings(),
) -> tuple[RenderOutput, RenderContext]:
    """Render the cloud; returns the output and a context for backward."""
    if background is None:
        background = np.zeros(3)
    background = np.asarray(background, dtype=np.float64)
    h, w = camera.height, camera.width
    n = len(cloud)

    mean2d_all, depth_all = project_points(camera, cloud.means)
    keep = np.flatnonzero(depth_all > camera.near_clip)
    # stable depth order, ties broken by original index
    keep = keep[np.lexsort((keep, depth_all[keep]))]

    p_cam = camera.to_camera(cloud.means[keep])
    cov3d = cloud.covariances()[keep]
    cov2d = project_covariance(camera, cov3d, p_cam)
    conic = _invert_2x2(cov2d)
    delta = cloud.means[keep] - camera.position
    dist = np.linalg.norm(delta, axis=1)
    dirs = delta / np.maximum(dist, 1e-12)[:, None]
    colors, raw_colors = evaluate_colors(cloud.sh[keep], dirs)
    opacity = sigmoid(cloud.opacity_logits[keep])

    ctx = RenderContext(
        cloud=cloud,
        camera=camera,
        settings=settings,
        background=background,
        indices=keep,
        p_cam=p_cam,
        mean2d=mean2d_all[keep],
        cov2d=cov2d,
        conic=conic,
        cov3d=cov3d,
        colors=colors,
        raw_colors=raw_colors,
        dirs=dirs,
        dist=dist,
        opacity=opacity,
        tiles=tile_bin(
            mean2d_all[keep], cov2d, opacity, w, h, settings.tile_size,
            settings.skip_alpha,
        ),
    )

    image = np.empty((h, w, 3))
    image[:] = background
    alpha_map = np.zeros((h, w))
    touch = np.zeros(n, dtype=np.int64)

    for tile in ctx.tiles:
        y0, y1, x0, x1, members = tile
        members, d, g, alpha, t_before, alive, t_final = _tile_alpha_transmittance(
            ctx, tile
        )
        weight = alpha * t_before * alive
        tile_img = weight @ ctx.colors[members] + t_final[:, None] * background
        shape = (y1 - y0, x1 - x0)
        image[y0:y1, x0:x1] = tile_img.reshape(shape + (3,))
        alpha_map[y0:y1, x0:x1] = (1.0 - t_final).reshape(shape)
        np.add.at(touch, ctx.indices[members], (weight > 0).sum(axis=0))

    return RenderOutput(image=image, alpha_map=alpha_map, per_gaussian_touch_count=touch), ctx


def rasterize_backward(ctx: RenderContext, d_image: np.ndarray) -> GradientBuffer:
    """Gradients of a scalar loss w.r.t. every raw cloud parameter.

    `d_image` is dL/d(image) of the matching forward call. All chains are
    analytic; view-space positional gradients are recorded per Gaussian as
    the norm of dL/d(mean2d).
    """
    cloud = ctx.cloud
    cam = ctx.camera
    n = len(cloud)
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != (cam.height, cam.width, 3):
        raise DataError(
            f"d_image shape {d_image.shape} does not match render "
            f"{(cam.height, cam.width, 3)}"
        )

    m = len(ctx.indices)
    grads = GradientBuffer.zeros(n)
    if m == 0:
        return grads

    # accumulators over culled-survivor index space
    acc_color = np.zeros((m, 3))
    acc_opacity = np.zeros(m)
    acc_mean2d = np.zeros((m, 2))
    acc_conic = np.zeros((m, 2, 2))
    touched = np.zeros(m, dtype=bool)

    gb_dot = d_image @ ctx.background  # (H, W) upstream for the bg term

    for tile in ctx.tiles:
        y0, y1, x0, x1, _ = tile
        members, d, g, alpha, t_before, alive, t_final = _tile_alpha_transmittance(
            ctx, tile
        )
        g_pix = d_image[y0:y1, x0:x1].reshape(-1, 3)  # (P, 3)
        gb = gb_dot[y0:y1, x0:x1].ravel()  # (P,)

        weight = alpha * t_before * alive  # (P, K)
        # color gradient: image += weight * color
        np.add.at(acc_color, members, weight.T @ g_pix)

        u = g_pix @ ctx.colors[members].T  # (P, K) = dL/d(contribution)
        live = weight > 0
        term = u * alpha * t_before * live
        # suffix sum over later splats plus the background term
        suffix = np.cumsum(term[:, ::-1], axis=1)[:, ::-1]
        suffix = np.concatenate([suffix[:, 1:], np.zeros((term.shape[0], 1))], axis=1)
        suffix += (gb * t_final)[:, None]
        d_alpha = (u * t_before - suffix / np.maximum(1.0 - alpha, 1e-12)) * alive
        # clamp is flat above alpha_clamp; skipped splats are flat at zero
        unclamped = ctx.opacity[members][None, :] * g < ctx.settings.alpha_clamp
        d_alpha = np.where((alpha > 0) & unclamped, d_alpha, 0.0)

        np.add.at(acc_opacity, members, (d_alpha * g).sum(axis=0))
        d_g = d_alpha * ctx.opacity[members][None, :]
        d_maha = -0.5 * g * d_g  # (P, K)

        con = ctx.conic[members]
        cd = np.einsum("kij,pkj->pki", con, d)  # C d per pixel-splat
        d_d = 2.0 * cd * d_maha[..., None]
        np.add.at(acc_mean2d, members, -d_d.sum(axis=0))
        d_con = d_maha[..., None, None] * (d[..., :, None] * d[..., None, :])
        np.add.at(acc_conic, members, d_con.sum(axis=0))
        np.add.at(touched, members, live.any(axis=0))

    # ---- per-Gaussian chains back to raw parameters ----
    idx = ctx.indices
    grads.viewspace_grad_norm[idx] = np.linalg.norm(acc_mean2d, axis=1)
    grads.contributed[idx] = touched

    # color -> SH and view direction
    g_sh, g_dirs = colors_backward(
        cloud.sh[idx], ctx.dirs, ctx.raw_colors, acc_color
    )
    grads.d_sh[idx] = g_sh
    proj = np.eye(3)[None] - ctx.dirs[:, :, None] * ctx.dirs[:, None, :]
    d_mean_world = np.einsum(
        "nij,nj->ni", proj / np.maximum(ctx.dist, 1e-12)[:, None, None], g_dirs
    )

    # conic -> cov2d (inverse map adjoint)
    d_cov2d = -np.einsum("nij,njk,nkl->nil", ctx.conic, acc_conic, ctx.conic)

    # cov2d = M cov3d M^T with M = J R_w
    jac = projection_jacobian(cam, ctx.p_cam)
    m_mat = jac @ cam.rotation
    d_cov3d = np.einsum("nji,njk,nkl->nil", m_mat, d_cov2d, m_mat)
    sym = d_cov2d + np.swapaxes(d_cov2d, -1, -2)
    d_m = np.einsum("nij,njk,nkl->nil", sym, m_mat, ctx.cov3d)
    d_jac = np.einsum("nij,kj->nik", d_m, cam.rotation)

    # J entries depend on the camera-space point
    x, y, z = ctx.p_cam[:, 0], ctx.p_cam[:, 1], ctx.p_cam[:, 2]
    fx, fy = cam.fx, cam.fy
    d_p_cam = np.zeros_like(ctx.p_cam)
    d_p_cam[:, 0] += d_jac[:, 0, 2] * (-fx / z**2)
    d_p_cam[:, 1] += d_jac[:, 1, 2] * (-fy / z**2)
    d_p_cam[:, 2] += (
        d_jac[:, 0, 0] * (-fx / z**2)
        + d_jac[:, 1, 1] * (-fy / z**2)
        + d_jac[:, 0, 2] * (2.0 * fx * x / z**3)
        + d_jac[:, 1, 2] * (2.0 * fy * y / z**3)
    )

    # mean2d = perspective(p_cam): its Jacobian is exactly J
    d_p_cam += np.einsum("nji,nj->ni", jac, acc_mean2d)
    d_mean_world += d_p_cam @ cam.rotation

    # cov3d -> rotation quaternion + log scales
    d_rot, d_log_s = covariance_backward(
        cloud.rotations[idx], cloud.log_scales[idx], d_cov3d
    )

    grads.d_means[idx] = d_mean_world
    grads.d_rotations[idx] = d_rot
    grads.d_log_scales[idx] = d_log_s
    grads.d_opacity_logits[idx] = acc_opacity * ctx.opacity * (1.0 - ctx.opacity)
    return grads

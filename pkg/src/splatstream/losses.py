"""Training losses with analytic gradients.

render_loss drives per-frame optimization: a weighted sum of mean absolute
error and structural dissimilarity, L = (1-lambda)*L1 + lambda*(1-SSIM)/2.
warmup_loss pre-trains the transformation cache toward the identity map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import DataError, NumericalError

__all__ = ["LossConfig", "ssim", "render_loss", "warmup_loss"]


@dataclass(frozen=True)
class LossConfig:
    lambda_dssim: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise DataError("lambda_dssim must be in [0, 1]")
        if self.ssim_window % 2 != 1 or self.ssim_window < 3:
            raise DataError("ssim_window must be odd and >= 3")


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    ax = np.arange(window, dtype=np.float64) - window // 2
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return convolve2d(img, kernel, mode="valid")


def _ssim_channel(
    x: np.ndarray, y: np.ndarray, kernel: np.ndarray, c1: float, c2: float
):
    """Per-window SSIM map and the intermediates the backward pass needs."""
    mu_x = _valid(x, kernel)
    mu_y = _valid(y, kernel)
    conv_xx = _valid(x * x, kernel)
    conv_yy = _valid(y * y, kernel)
    conv_xy = _valid(x * y, kernel)
    var_x = conv_xx - mu_x**2
    var_y = conv_yy - mu_y**2
    cov_xy = conv_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * cov_xy + c2
    b1 = mu_x**2 + mu_y**2 + c1
    b2 = var_x + var_y + c2
    s = (a1 * a2) / (b1 * b2)
    return s, (mu_x, mu_y, a1, a2, b1, b2)


def ssim(x: np.ndarray, y: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """Mean SSIM over valid window positions (and channels if present)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    kernel = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    vals = [
        _ssim_channel(x[..., c], y[..., c], kernel, cfg.ssim_c1, cfg.ssim_c2)[0]
        for c in range(x.shape[-1])
    ]
    return float(np.mean(vals))


def render_loss(
    rendered: np.ndarray, target: np.ndarray, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    """Scalar loss and its gradient w.r.t. the rendered image.

    Both images are H x W x C (or H x W) in [0, 1]. The SSIM term is
    differentiated analytically; the adjoint of a valid correlation with a
    symmetric kernel is a full convolution with the same kernel.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DataError(
            f"render_loss shape mismatch: {rendered.shape} vs {target.shape}"
        )
    squeeze = rendered.ndim == 2
    if squeeze:
        rendered = rendered[..., None]
        target = target[..., None]
    h, w, channels = rendered.shape
    lam = cfg.lambda_dssim

    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lam) * np.sign(diff) / diff.size

    kernel = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    if h < cfg.ssim_window or w < cfg.ssim_window:
        raise DataError("image smaller than the SSIM window")

    ssim_sum = 0.0
    n_windows = (h - cfg.ssim_window + 1) * (w - cfg.ssim_window + 1) * channels
    # upstream factor: L += lam * (1 - mean(S)) / 2  =>  dL/dS = -lam / (2 * count)
    upstream = -lam / (2.0 * n_windows)
    for c in range(channels):
        x = rendered[..., c]
        y = target[..., c]
        s, (mu_x, mu_y, a1, a2, b1, b2) = _ssim_channel(
            x, y, kernel, cfg.ssim_c1, cfg.ssim_c2
        )
        ssim_sum += float(s.sum())
        if lam == 0.0:
            continue
        inv_bb = 1.0 / (b1 * b2)
        g_a1 = a2 * inv_bb
        g_a2 = a1 * inv_bb
        g_b1 = -s / b1
        g_b2 = -s / b2
        # mu_x enters a1, b1, and (negatively) cov_xy and var_x
        g_mu_x = 2.0 * mu_y * g_a1 + 2.0 * mu_x * g_b1
        g_mu_x += -2.0 * mu_y * g_a2  # cov_xy = conv_xy - mu_x mu_y
        g_mu_x += -2.0 * mu_x * g_b2  # var_x  = conv_xx - mu_x^2
        g_conv_xy = 2.0 * g_a2
        g_conv_xx = g_b2
        # adjoint of the valid correlation: full convolution (kernel symmetric)
        back = convolve2d(g_mu_x, kernel, mode="full")
        back += convolve2d(g_conv_xx, kernel, mode="full") * (2.0 * x)
        back += convolve2d(g_conv_xy, kernel, mode="full") * y
        grad[..., c] += upstream * back

    mean_ssim = ssim_sum / n_windows
    loss = (1.0 - lam) * l1 + lam * (1.0 - mean_ssim) / 2.0
    if squeeze:
        grad = grad[..., 0]
    return float(loss), grad


def warmup_loss(
    d_mu: np.ndarray, d_q: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Identity-pull loss for cache pre-training, mean over the batch.

    Per element: |d_mu|_1 - cos^2(angle(norm(d_q), identity quaternion)).
    The square makes the two antipodal identity quaternions equivalent.
    Returns (loss, grad_d_mu, grad_d_q).
    """
    d_mu = np.asarray(d_mu, dtype=np.float64)
    d_q = np.asarray(d_q, dtype=np.float64)
    if d_mu.ndim != 2 or d_mu.shape[1] != 3 or d_q.ndim != 2 or d_q.shape[1] != 4:
        raise DataError("warmup_loss expects d_mu (B,3) and d_q (B,4)")
    batch = d_mu.shape[0]
    if batch == 0:
        raise DataError("warmup_loss batch is empty")

    sq_norm = np.sum(d_q * d_q, axis=1)
    if np.any(sq_norm < 1e-24):
        raise NumericalError("zero-norm d_q in warmup_loss")
    w = d_q[:, 0]
    cos_sq = w * w / sq_norm
    loss = float(np.mean(np.sum(np.abs(d_mu), axis=1) - cos_sq))

    grad_mu = np.sign(d_mu) / batch
    # d/dw (w^2/n2) = 2 w (n2 - w^2) / n2^2 ; d/dq_i = -2 w^2 q_i / n2^2
    grad_q = (-2.0 * (w * w)[:, None] * d_q) / (sq_norm**2)[:, None]
    grad_q[:, 0] = 2.0 * w * (sq_norm - w * w) / sq_norm**2
    grad_q = -grad_q / batch  # loss subtracts cos^2
    return loss, grad_mu, grad_q


def psnr(rendered: np.ndarray, target: np.ndarray, cap: float = 99.0) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Identical images have infinite PSNR; it is reported as `cap` so logs and
    CSV stay finite.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DataError(
            f"psnr shape mismatch: {rendered.shape} vs {target.shape}"
        )
    mse = float(np.mean((rendered - target) ** 2))
    if mse <= 0.0:
        return cap
    return min(cap, -10.0 * math.log10(mse))

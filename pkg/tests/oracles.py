"""Independent reference implementations used to check the package.

Everything here is deliberately written from first principles with plain
loops and explicit matrix arithmetic, sharing no code with the package, so
agreement between the two is meaningful. Slow is fine; these run on tiny
scenes.
"""

from __future__ import annotations

import math

import numpy as np

SH0 = 0.28209479177387814
SH1 = 0.4886025119029199


def fd_gradient(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar f over a flat copy of x."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel().copy()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(flat.reshape(x.shape))
        flat[i] = orig - step
        f_minus = f(flat.reshape(x.shape))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(x.shape)


def assert_grad_close(analytic, numeric, rel=2e-2, abs_tol=1e-6, label=""):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(numeric), np.abs(analytic))
    err = np.abs(analytic - numeric)
    ok = (err <= abs_tol) | (err <= rel * denom)
    if not np.all(ok):
        worst = np.unravel_index(np.argmax(err - rel * denom), err.shape)
        raise AssertionError(
            f"gradient mismatch {label} at {worst}: "
            f"analytic={analytic[worst]:.6e} numeric={numeric[worst]:.6e}"
        )


def quat_to_mat(q):
    """Rotation matrix from a quaternion (w,x,y,z), normalizing first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / math.sqrt(float(np.dot(q, q)))
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_to_mat(q)


def project_point_ref(w2c, fx, fy, cx, cy, p_world):
    """Rigid transform + perspective divide, spelled out."""
    p = np.asarray(p_world, dtype=np.float64)
    ph = np.array([p[0], p[1], p[2], 1.0])
    pc = np.asarray(w2c, dtype=np.float64) @ ph
    x, y, z = pc[0], pc[1], pc[2]
    return np.array([fx * x / z + cx, fy * y / z + cy]), z


def sh_color_ref(sh_coeffs, direction):
    """Color from (4,3) coefficients at a unit direction, basis (y,z,x)."""
    d = np.asarray(direction, dtype=np.float64)
    basis = np.array([SH0, SH1 * d[1], SH1 * d[2], SH1 * d[0]])
    raw = 0.5 + basis @ np.asarray(sh_coeffs, dtype=np.float64)
    return np.minimum(1.0, np.maximum(0.0, raw))


def render_ref(
    means,
    quats,
    log_scales,
    opacity_logits,
    sh,
    w2c,
    fx,
    fy,
    cx,
    cy,
    width,
    height,
    background,
    near_clip=0.01,
    alpha_clamp=0.99,
    skip_alpha=1.0 / 255.0,
    stop_transmittance=1e-4,
    lowpass=0.3,
):
    """Per-pixel loop over all Gaussians, front to back. No tiling.

    Mirrors the rendering contract: sort by depth (ties by index), alpha =
    min(clamp, sigmoid(logit) * exp(-0.5 d^T cov2d^-1 d)), drop contributions
    below skip_alpha, stop once transmittance falls below stop_transmittance,
    composite the leftover transmittance with the background.
    """
    means = np.asarray(means, dtype=np.float64)
    n = len(means)
    w2c = np.asarray(w2c, dtype=np.float64)
    rot_w = w2c[:3, :3]
    cam_pos = -rot_w.T @ w2c[:3, 3]
    background = np.asarray(background, dtype=np.float64)

    splats = []
    for i in range(n):
        pix, z = project_point_ref(w2c, fx, fy, cx, cy, means[i])
        if z <= near_clip:
            continue
        rot = quat_to_mat(quats[i])
        s2 = np.exp(2.0 * np.asarray(log_scales[i], dtype=np.float64))
        cov3d = rot @ np.diag(s2) @ rot.T
        pc = rot_w @ means[i] + w2c[:3, 3]
        x, y, zc = pc
        jac = np.array(
            [[fx / zc, 0.0, -fx * x / zc**2], [0.0, fy / zc, -fy * y / zc**2]]
        )
        m = jac @ rot_w
        cov2d = m @ cov3d @ m.T
        cov2d = cov2d + np.diag([lowpass, lowpass])
        det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
        inv = np.array(
            [[cov2d[1, 1], -cov2d[0, 1]], [-cov2d[1, 0], cov2d[0, 0]]]
        ) / det
        view_dir = means[i] - cam_pos
        view_dir = view_dir / np.linalg.norm(view_dir)
        color = sh_color_ref(sh[i], view_dir)
        opacity = 1.0 / (1.0 + math.exp(-float(opacity_logits[i])))
        splats.append((z, i, pix, inv, color, opacity))

    splats.sort(key=lambda s: (s[0], s[1]))

    img = np.zeros((height, width, 3))
    alpha_map = np.zeros((height, width))
    for py in range(height):
        for px in range(width):
            trans = 1.0
            accum = np.zeros(3)
            for z, i, pix, inv, color, opacity in splats:
                if trans < stop_transmittance:
                    break
                d = np.array([px - pix[0], py - pix[1]])
                g = math.exp(-0.5 * float(d @ inv @ d))
                a = min(alpha_clamp, opacity * g)
                if a < skip_alpha:
                    continue
                accum += color * a * trans
                trans *= 1.0 - a
            img[py, px] = accum + trans * background
            alpha_map[py, px] = 1.0 - trans
    return img, alpha_map


def ssim_ref(x, y, window=11, sigma=1.5, c1=0.01**2, c2=0.03**2):
    """Mean SSIM over valid window positions, direct nested loops."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    half = window // 2
    ax = np.arange(window) - half
    g1 = np.exp(-(ax**2) / (2 * sigma**2))
    kernel = np.outer(g1, g1)
    kernel /= kernel.sum()

    if x.ndim == 3:
        vals = [ssim_ref(x[..., c], y[..., c], window, sigma, c1, c2) for c in range(x.shape[-1])]
        return float(np.mean(vals))

    h, w = x.shape
    total = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            px = x[i : i + window, j : j + window]
            py = y[i : i + window, j : j + window]
            mx = float((kernel * px).sum())
            my = float((kernel * py).sum())
            sxx = float((kernel * px * px).sum()) - mx * mx
            syy = float((kernel * py * py).sum()) - my * my
            sxy = float((kernel * px * py).sum()) - mx * my
            s = ((2 * mx * my + c1) * (2 * sxy + c2)) / (
                (mx * mx + my * my + c1) * (sxx + syy + c2)
            )
            total.append(s)
    return float(np.mean(total))


def adam_steps_ref(grads, lr, beta1=0.9, beta2=0.999, eps=1e-15):
    """Parameter trajectory for a scalar under Adam, from zero state."""
    m = 0.0
    v = 0.0
    x = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
        out.append(x)
    return out

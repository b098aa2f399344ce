"""Frame-specific Gaussian addition: selection, spawning, and quantity control.

A frame's render set is the frozen transformed cloud plus a small batch of
additional Gaussians owned by this module. Candidates are picked where the
image loss pushes hardest on projected means, new Gaussians are sampled
around the picked ones, and a per-epoch split/prune cycle keeps the batch
small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cameras import Camera
from .errors import DataError, check_finite
from .gaussians import GaussianCloud, inverse_sigmoid, quat_to_rotation_matrix
from .losses import LossConfig, render_loss
from .optim import Adam
from .rasterizer import RasterSettings, rasterize_backward, rasterize_forward

_LR_KEY_BY_PARAM = {
    "means": "mean",
    "rotations": "rotation",
    "log_scales": "scale",
    "opacity_logits": "opacity",
    "sh": "sh",
}


@dataclass
class AdditionConfig:
    """Knobs for spawning and controlling additional Gaussians."""

    tau_grad: float = 0.00015
    tau_alpha: float = 0.01
    spawn_cov_scale: float = 2.0
    split_scale_factor: float = 0.8
    init_opacity: float = 0.1
    stage2_lrs: dict = field(
        default_factory=lambda: {
            "mean": 0.0024,
            "sh": 0.0375,
            "opacity": 0.75,
            "scale": 0.075,
            "rotation": 0.015,
        }
    )
    quantity_control: bool = True
    max_additional: int = 10000

    def __post_init__(self) -> None:
        if self.tau_grad <= 0:
            raise ValueError("tau_grad must be positive")
        if not 0.0 < self.tau_alpha < 1.0:
            raise ValueError("tau_alpha must be in (0, 1)")
        if not 0.0 < self.init_opacity < 1.0:
            raise ValueError("init_opacity must be in (0, 1)")
        if self.spawn_cov_scale <= 0:
            raise ValueError("spawn_cov_scale must be positive")
        if self.split_scale_factor <= 0:
            raise ValueError("split_scale_factor must be positive")
        if self.max_additional < 0:
            raise ValueError("max_additional must be >= 0")
        missing = set(_LR_KEY_BY_PARAM.values()) - set(self.stage2_lrs)
        if missing:
            raise ValueError(f"stage2_lrs missing entries: {sorted(missing)}")
        for key in _LR_KEY_BY_PARAM.values():
            if self.stage2_lrs[key] <= 0:
                raise ValueError(f"stage2_lrs[{key!r}] must be positive")

    def lr_by_param(self) -> dict[str, float]:
        return {p: float(self.stage2_lrs[k]) for p, k in _LR_KEY_BY_PARAM.items()}


@dataclass
class ViewspaceStats:
    """Accumulates per-Gaussian projected-mean gradient magnitudes over views."""

    norm_accum: np.ndarray
    view_count: np.ndarray

    @staticmethod
    def zeros(n: int) -> "ViewspaceStats":
        return ViewspaceStats(
            norm_accum=np.zeros(n), view_count=np.zeros(n, dtype=np.int64)
        )

    def add(self, norms: np.ndarray, contributed: np.ndarray) -> None:
        self.norm_accum += norms
        self.view_count += contributed.astype(np.int64)

    def averages(self) -> np.ndarray:
        return self.norm_accum / np.maximum(1, self.view_count)


def select_high_gradient(stats: ViewspaceStats, tau_grad: float) -> np.ndarray:
    """Indices whose average view-space gradient magnitude exceeds tau_grad."""
    return np.flatnonzero(stats.averages() > tau_grad)


def _sample_around(
    cloud: GaussianCloud,
    indices: np.ndarray,
    cov_scale: float,
    rng: np.random.Generator,
) -> np.ndarray:
    # x = mu + R (s * sqrt(c) * z) has covariance c * R diag(s^2) R^T
    rot = quat_to_rotation_matrix(cloud.unit_rotations()[indices])
    sigma = cloud.scales[indices] * math.sqrt(cov_scale)
    z = rng.standard_normal((len(indices), 3))
    return cloud.means[indices] + np.einsum("nij,nj->ni", rot, sigma * z)


def spawn_gaussians(
    cloud: GaussianCloud,
    selected: np.ndarray,
    cfg: AdditionConfig,
    rng: np.random.Generator,
) -> GaussianCloud:
    """One new Gaussian per selected index, positioned by N(mu, c * Sigma).

    SH and log-scales are copied from the source; rotation starts at the
    identity quaternion and opacity at cfg.init_opacity.
    """
    selected = np.asarray(selected, dtype=np.int64)
    k = len(selected)
    rotations = np.zeros((k, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        means=_sample_around(cloud, selected, cfg.spawn_cov_scale, rng),
        rotations=rotations,
        log_scales=cloud.log_scales[selected].copy(),
        opacity_logits=inverse_sigmoid(np.full(k, cfg.init_opacity)),
        sh=cloud.sh[selected].copy(),
    )


@dataclass
class QuantityControlResult:
    cloud: GaussianCloud
    split_indices: np.ndarray  # rows of the input cloud that gained a sibling
    kept: np.ndarray  # bool mask over the post-split rows (input + siblings)

    @property
    def n_pruned(self) -> int:
        return int(len(self.kept) - self.kept.sum())


def quantity_control_epoch(
    additional: GaussianCloud,
    stats: ViewspaceStats,
    cfg: AdditionConfig,
    rng: np.random.Generator,
    allow_split: bool = True,
) -> QuantityControlResult:
    """Split high-gradient additional Gaussians, then prune dim ones.

    A split samples a sibling from N(mu, spawn_cov_scale * Sigma) that
    inherits rotation, SH, and opacity, then shrinks both rows' scales by
    split_scale_factor. Rows with activated opacity below tau_alpha are
    dropped afterwards. With allow_split=False only the prune runs, used at
    the last epoch boundary so freshly split halves are never serialized
    untrained.
    """
    avg = stats.averages()
    split_idx = (
        np.flatnonzero(avg > cfg.tau_grad) if allow_split else np.zeros(0, np.int64)
    )
    room = cfg.max_additional - len(additional)
    if len(split_idx) > room:
        order = np.argsort(-avg[split_idx], kind="stable")
        split_idx = np.sort(split_idx[order[: max(0, room)]])

    merged = additional.copy()
    if len(split_idx) > 0:
        siblings = GaussianCloud(
            means=_sample_around(additional, split_idx, cfg.spawn_cov_scale, rng),
            rotations=additional.rotations[split_idx].copy(),
            log_scales=additional.log_scales[split_idx]
            + math.log(cfg.split_scale_factor),
            opacity_logits=additional.opacity_logits[split_idx].copy(),
            sh=additional.sh[split_idx].copy(),
        )
        merged.log_scales[split_idx] += math.log(cfg.split_scale_factor)
        merged = GaussianCloud.concatenate(merged, siblings)

    kept = merged.opacities >= cfg.tau_alpha
    return QuantityControlResult(
        cloud=merged.select(kept), split_indices=split_idx, kept=kept
    )


def _params_of(cloud: GaussianCloud) -> dict[str, np.ndarray]:
    return {
        "means": cloud.means,
        "rotations": cloud.rotations,
        "log_scales": cloud.log_scales,
        "opacity_logits": cloud.opacity_logits,
        "sh": cloud.sh,
    }


def _remap_moments(adam: Adam, n_siblings: int, kept: np.ndarray) -> None:
    # new sibling rows start with zero moments; pruned rows drop theirs
    for key in adam.m:
        for moments in (adam.m, adam.v):
            pad = np.zeros((n_siblings,) + moments[key].shape[1:])
            moments[key] = np.concatenate([moments[key], pad])[kept]


def stage2_optimize(
    transformed: GaussianCloud,
    additional: GaussianCloud,
    views: Sequence[tuple[Camera, np.ndarray]],
    cfg: AdditionConfig,
    iterations: int,
    rng: np.random.Generator,
    settings: RasterSettings = RasterSettings(),
    loss_cfg: LossConfig = LossConfig(),
    background: np.ndarray | None = None,
) -> tuple[GaussianCloud, list[float]]:
    """Optimize the additional Gaussians against the frozen transformed cloud.

    Each iteration renders transformed + additional on one training view and
    applies Adam (per-parameter learning rates) to the additional rows only.
    An epoch is one pass over the views; quantity control runs at each epoch
    boundary unless disabled, splitting only while a full epoch of training
    remains. Returns the optimized batch and the per iteration losses.
    """
    if len(views) == 0:
        raise DataError("stage 2 requires at least one training view")
    additional = additional.copy()
    losses: list[float] = []
    if iterations == 0 or len(additional) == 0:
        return additional, losses

    adam = Adam(_params_of(additional))
    lr = cfg.lr_by_param()
    n_frozen = len(transformed)
    n_views = len(views)
    order = rng.permutation(n_views)
    stats = ViewspaceStats.zeros(len(additional))

    for t in range(iterations):
        camera, target = views[order[t % n_views]]
        joint = GaussianCloud.concatenate(transformed, additional)
        out, ctx = rasterize_forward(joint, camera, background, settings)
        loss, d_image = render_loss(out.image, target, loss_cfg)
        check_finite("stage2 loss", np.asarray(loss))
        losses.append(float(loss))

        grads = rasterize_backward(ctx, d_image)
        adam.step(
            {
                "means": grads.d_means[n_frozen:],
                "rotations": grads.d_rotations[n_frozen:],
                "log_scales": grads.d_log_scales[n_frozen:],
                "opacity_logits": grads.d_opacity_logits[n_frozen:],
                "sh": grads.d_sh[n_frozen:],
            },
            lr,
        )
        stats.add(
            grads.viewspace_grad_norm[n_frozen:], grads.contributed[n_frozen:]
        )

        if (t + 1) % n_views == 0:
            if cfg.quantity_control:
                qc = quantity_control_epoch(
                    additional,
                    stats,
                    cfg,
                    rng,
                    allow_split=t + 1 + n_views <= iterations,
                )
                _remap_moments(adam, len(qc.split_indices), qc.kept)
                additional = qc.cloud
                adam.params = _params_of(additional)
                if len(additional) == 0:
                    break
            stats = ViewspaceStats.zeros(len(additional))
            order = rng.permutation(n_views)

    return additional, losses

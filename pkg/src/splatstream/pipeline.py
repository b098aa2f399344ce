"""End-to-end streaming: frame-0 fit, warm-up, per-frame two-stage loop.

Frame 0 fits a Gaussian cloud to the first frame's views from an initial
point set, with a simplified densify/prune schedule. A transformation cache
is then warmed toward the identity and reused as the starting point of every
frame. Each subsequent frame runs stage 1 (cache-only optimization against
the frozen previous cloud) and stage 2 (frame-specific additional Gaussians),
emits a frame record, and carries only the transformed cloud forward.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .adaptive import (
    AdditionConfig,
    ViewspaceStats,
    select_high_gradient,
    spawn_gaussians,
    stage2_optimize,
)
from .cameras import Camera
from .dataset import Dataset, camera_to_dict
from .errors import DataError, check_finite
from .gaussians import GaussianCloud, inverse_sigmoid
from .losses import LossConfig, psnr, render_loss
from .ntc import HashGridConfig, NeuralTransformationCache, warmup_train
from .optim import Adam
from .rasterizer import RasterSettings, rasterize_backward, rasterize_forward
from .streamio import FrameRecord, StreamData, StreamWriter, serialize_ntc
from .transform import apply_ntc, apply_ntc_backward

Views = "list[tuple[Camera, np.ndarray]]"


@dataclass
class PipelineConfig:
    stage1_iterations: int = 150
    stage2_iterations: int = 100
    warmup_iterations: int = 500
    ntc_lr: float = 0.002
    frame0_iterations: int = 600
    densify_until: int = 400
    densify_interval: int = 100
    densify_grad_threshold: float = 0.0004
    densify_scale_threshold: float = 0.1
    prune_opacity: float = 0.005
    init_opacity: float = 0.3
    warmup_noise_fraction: float = 0.01  # of the AABB diagonal
    fit_aabb: bool = True
    aabb_margin: float = 1.5
    hidden_layers: int = 2
    hidden_dim: int = 64
    seed: int = 0
    frame0_lrs: dict = field(
        default_factory=lambda: {
            "mean": 0.0005,
            "sh": 0.0125,
            "opacity": 0.05,
            "scale": 0.02,
            "rotation": 0.002,
        }
    )
    grid: HashGridConfig = field(default_factory=HashGridConfig)
    addition: AdditionConfig = field(default_factory=AdditionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    raster: RasterSettings = field(default_factory=RasterSettings)

    def __post_init__(self) -> None:
        for name in (
            "stage1_iterations",
            "stage2_iterations",
            "warmup_iterations",
            "frame0_iterations",
            "densify_until",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")
        if self.ntc_lr <= 0:
            raise ValueError("ntc_lr must be positive")


def _params_of(cloud: GaussianCloud) -> dict[str, np.ndarray]:
    return {
        "means": cloud.means,
        "rotations": cloud.rotations,
        "log_scales": cloud.log_scales,
        "opacity_logits": cloud.opacity_logits,
        "sh": cloud.sh,
    }


def _lr_map(lrs: dict) -> dict[str, float]:
    return {
        "means": float(lrs["mean"]),
        "rotations": float(lrs["rotation"]),
        "log_scales": float(lrs["scale"]),
        "opacity_logits": float(lrs["opacity"]),
        "sh": float(lrs["sh"]),
    }


def build_initial_cloud(points: np.ndarray, cfg: PipelineConfig) -> GaussianCloud:
    """Isotropic gray Gaussians at the given points, sized by point spacing."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise DataError("initial point set is empty")
    if n > 1:
        tree = cKDTree(points)
        dist, _ = tree.query(points, k=2)
        spacing = np.maximum(dist[:, 1], 1e-4)
    else:
        spacing = np.full(1, 0.2)
    scales = np.clip(0.5 * spacing, 1e-3, 0.5)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        means=points.copy(),
        rotations=rotations,
        log_scales=np.log(np.tile(scales[:, None], (1, 3))),
        opacity_logits=np.full(n, inverse_sigmoid(cfg.init_opacity)),
        sh=np.zeros((n, 4, 3)),
    )


def densify_step(
    cloud: GaussianCloud,
    stats: ViewspaceStats,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> GaussianCloud:
    """Clone small / split large high-gradient Gaussians, then prune dim ones."""
    avg = stats.averages()
    high = avg > cfg.densify_grad_threshold
    big = cloud.scales.max(axis=1) > cfg.densify_scale_threshold
    split_idx = np.flatnonzero(high & big)
    clone_idx = np.flatnonzero(high & ~big)

    out = cloud.copy()
    parts = [out]
    if len(split_idx) > 0:
        siblings = out.select(split_idx)
        offsets = rng.standard_normal((len(split_idx), 3)) * out.scales[split_idx]
        siblings.means += offsets
        shrink = np.log(1.0 / 1.6)
        siblings.log_scales += shrink
        out.log_scales[split_idx] += shrink
        parts.append(siblings)
    if len(clone_idx) > 0:
        parts.append(out.select(clone_idx))
    merged = parts[0]
    for p in parts[1:]:
        merged = GaussianCloud.concatenate(merged, p)
    return merged.select(merged.opacities >= cfg.prune_opacity)


def train_frame0(
    views,
    points: np.ndarray,
    cfg: PipelineConfig,
    background: np.ndarray | None = None,
) -> tuple[GaussianCloud, list[float]]:
    """Fit the initial cloud to the first frame's training views."""
    if len(views) == 0:
        raise DataError("frame 0 requires at least one training view")
    rng = np.random.default_rng([cfg.seed, 0])
    cloud = build_initial_cloud(points, cfg)
    losses: list[float] = []
    if cfg.frame0_iterations == 0:
        return cloud.quantize_float32(), losses

    adam = Adam(_params_of(cloud))
    lr = _lr_map(cfg.frame0_lrs)
    n_views = len(views)
    order = rng.permutation(n_views)
    stats = ViewspaceStats.zeros(len(cloud))

    for t in range(cfg.frame0_iterations):
        camera, target = views[order[t % n_views]]
        out, ctx = rasterize_forward(cloud, camera, background, cfg.raster)
        loss, d_image = render_loss(out.image, target, cfg.loss)
        check_finite("frame0 loss", np.asarray(loss))
        losses.append(float(loss))
        grads = rasterize_backward(ctx, d_image)
        adam.step(
            {
                "means": grads.d_means,
                "rotations": grads.d_rotations,
                "log_scales": grads.d_log_scales,
                "opacity_logits": grads.d_opacity_logits,
                "sh": grads.d_sh,
            },
            lr,
        )
        stats.add(grads.viewspace_grad_norm, grads.contributed)
        if (t + 1) % n_views == 0:
            order = rng.permutation(n_views)
        if (t + 1) % cfg.densify_interval == 0 and (t + 1) <= cfg.densify_until:
            cloud = densify_step(cloud, stats, cfg, rng)
            adam = Adam(_params_of(cloud))
            stats = ViewspaceStats.zeros(len(cloud))

    return cloud.quantize_float32(), losses


def clone_cache(cache: NeuralTransformationCache) -> NeuralTransformationCache:
    out = NeuralTransformationCache(
        cache.grid, hidden_layers=cache.hidden_layers, hidden_dim=cache.hidden_dim
    )
    out.set_params(cache.get_params())
    out.reset_adam()
    return out


@dataclass
class FrameSummary:
    frame_index: int
    stage1_losses: list[float]
    stage2_losses: list[float]
    train_psnr: float
    n_gaussians: int
    n_additional: int
    ntc_bytes: int
    additional_bytes: int
    total_bytes: int
    stage1_seconds: float
    stage2_seconds: float
    render_set: GaussianCloud | None = None


def process_frame(
    prev_cloud: GaussianCloud,
    warm_cache: NeuralTransformationCache,
    views,
    cfg: PipelineConfig,
    frame_index: int,
    background: np.ndarray | None = None,
) -> tuple[FrameRecord, GaussianCloud, FrameSummary]:
    """One streamed frame: stage-1 cache fit, stage-2 additions, a record."""
    if len(prev_cloud) == 0:
        raise DataError("previous cloud is empty")
    if len(views) == 0:
        raise DataError(f"frame {frame_index} has no training views")
    rng = np.random.default_rng([cfg.seed, frame_index])
    cache = clone_cache(warm_cache)

    t0 = time.perf_counter()
    n_views = len(views)
    order = rng.permutation(n_views)
    encode_ctx = None
    stats = ViewspaceStats.zeros(len(prev_cloud))
    stats_from = max(0, cfg.stage1_iterations - n_views)
    losses1: list[float] = []

    for t in range(cfg.stage1_iterations):
        camera, target = views[order[t % n_views]]
        transformed, tctx = apply_ntc(prev_cloud, cache, encode_ctx=encode_ctx)
        if encode_ctx is None:
            encode_ctx = tctx.fwd.encode
        out, rctx = rasterize_forward(transformed, camera, background, cfg.raster)
        loss, d_image = render_loss(out.image, target, cfg.loss)
        check_finite("stage1 loss", np.asarray(loss))
        losses1.append(float(loss))
        grads = rasterize_backward(rctx, d_image)
        cache_grads, touched = apply_ntc_backward(
            tctx, grads.d_means, grads.d_rotations, grads.d_sh
        )
        cache.adam_step(cache_grads, cfg.ntc_lr, touched)
        if t >= stats_from:
            stats.add(grads.viewspace_grad_norm, grads.contributed)
        if (t + 1) % n_views == 0:
            order = rng.permutation(n_views)

    cache.quantize_float32()
    transformed, _ = apply_ntc(prev_cloud, cache)
    stage1_seconds = time.perf_counter() - t0

    t1 = time.perf_counter()
    add_cfg = cfg.addition
    additional = GaussianCloud.empty()
    losses2: list[float] = []
    if cfg.stage2_iterations > 0 and cfg.stage1_iterations > 0:
        selected = select_high_gradient(stats, add_cfg.tau_grad)
        if len(selected) > add_cfg.max_additional:
            avg = stats.averages()
            keep = np.argsort(-avg[selected], kind="stable")[: add_cfg.max_additional]
            selected = np.sort(selected[keep])
        if len(selected) > 0:
            additional = spawn_gaussians(transformed, selected, add_cfg, rng)
            additional, losses2 = stage2_optimize(
                transformed,
                additional,
                views,
                add_cfg,
                cfg.stage2_iterations,
                rng,
                cfg.raster,
                cfg.loss,
                background,
            )
    additional = additional.quantize_float32()
    stage2_seconds = time.perf_counter() - t1

    record = FrameRecord(
        frame_index=frame_index,
        ntc_blob=serialize_ntc(cache),
        additional=additional,
    )
    sizes = record.sizes()
    render_set = GaussianCloud.concatenate(transformed, additional)
    train_psnr = float(
        np.mean(
            [
                psnr(
                    rasterize_forward(render_set, cam, background, cfg.raster)[
                        0
                    ].image,
                    target,
                )
                for cam, target in views
            ]
        )
    )
    summary = FrameSummary(
        frame_index=frame_index,
        stage1_losses=losses1,
        stage2_losses=losses2,
        train_psnr=train_psnr,
        n_gaussians=len(render_set),
        n_additional=len(additional),
        ntc_bytes=sizes["ntc_bytes"],
        additional_bytes=sizes["additional_bytes"],
        total_bytes=sizes["total_bytes"],
        stage1_seconds=stage1_seconds,
        stage2_seconds=stage2_seconds,
        render_set=render_set,
    )
    return record, transformed, summary


def fit_grid_to_cloud(
    grid: HashGridConfig, cloud: GaussianCloud, margin: float
) -> HashGridConfig:
    """Center the cache's box on the cloud with room for motion."""
    lo = cloud.means.min(axis=0)
    hi = cloud.means.max(axis=0)
    center = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo) * margin, 0.25)
    return replace(
        grid,
        aabb_min=tuple(center - half),
        aabb_max=tuple(center + half),
    )


def process_stream(
    dataset: Dataset, cfg: PipelineConfig, out_path
) -> tuple[list[FrameSummary], list[float]]:
    """Train the whole sequence, flushing each frame record as it is produced.

    Returns per-frame summaries (frame 0 included) and the warm-up loss
    history.
    """
    if len(dataset) == 0:
        raise DataError("dataset has no frames")
    train_ids = dataset.train_ids()
    frames = dataset.iter_frames(train_ids)
    background = dataset.background

    frame0 = next(frames)
    views0 = dataset.train_views(frame0)
    initial, losses0 = train_frame0(views0, dataset.points(), cfg, background)

    grid = cfg.grid
    if cfg.fit_aabb:
        grid = fit_grid_to_cloud(grid, initial, cfg.aabb_margin)
    cache = NeuralTransformationCache(
        grid, hidden_layers=cfg.hidden_layers, hidden_dim=cfg.hidden_dim
    )
    diagonal = float(
        np.linalg.norm(np.asarray(grid.aabb_max) - np.asarray(grid.aabb_min))
    )
    _, warm_history = warmup_train(
        cache,
        initial.means,
        noise_sigma=cfg.warmup_noise_fraction * diagonal,
        iterations=cfg.warmup_iterations,
        lr=cfg.ntc_lr,
        seed=cfg.seed,
    )
    # keep the live warm cache on the serialized f32 lattice, so resuming
    # from a stored stream reproduces the remaining frames bit-exactly
    cache.quantize_float32()

    header = {
        "cameras": [
            camera_to_dict(cam_id, dataset.cameras[cam_id], dataset.splits[cam_id])
            for cam_id in dataset.cameras
        ],
        "background": background.tolist(),
        "n_frames": len(dataset),
        "seed": cfg.seed,
    }

    summaries = [
        FrameSummary(
            frame_index=0,
            stage1_losses=losses0,
            stage2_losses=[],
            train_psnr=float(
                np.mean(
                    [
                        psnr(
                            rasterize_forward(initial, cam, background, cfg.raster)[
                                0
                            ].image,
                            target,
                        )
                        for cam, target in views0
                    ]
                )
            ),
            n_gaussians=len(initial),
            n_additional=0,
            ntc_bytes=0,
            additional_bytes=0,
            total_bytes=0,
            stage1_seconds=0.0,
            stage2_seconds=0.0,
            render_set=initial,
        )
    ]

    with StreamWriter(out_path, header) as writer:
        writer.write_initial(initial)
        writer.write_warmup(cache)
        prev = initial
        for frame in frames:
            views = dataset.train_views(frame)
            record, prev, summary = process_frame(
                prev, cache, views, cfg, frame.index, background
            )
            writer.write_frame(record)
            summaries.append(summary)
    return summaries, warm_history


def materialize_frame(stream: StreamData, frame_index: int) -> GaussianCloud:
    """Frame-i render set: fold the cached transforms, union the additions."""
    if not 0 <= frame_index < stream.n_frames:
        raise DataError(
            f"frame index {frame_index} out of range [0, {stream.n_frames})"
        )
    cloud = stream.initial_cloud
    for record in stream.records[:frame_index]:
        cloud, _ = apply_ntc(cloud, record.cache())
    if frame_index > 0:
        cloud = GaussianCloud.concatenate(
            cloud, stream.records[frame_index - 1].additional
        )
    return cloud


def playback_render(
    stream: StreamData,
    frame_index: int,
    camera: Camera,
    settings: RasterSettings = RasterSettings(),
) -> np.ndarray:
    background = np.asarray(stream.header.get("background", [0, 0, 0]), dtype=float)
    cloud = materialize_frame(stream, frame_index)
    out, _ = rasterize_forward(cloud, camera, background, settings)
    return out.image


def evaluate_stream(
    stream: StreamData,
    dataset: Dataset,
    split: str = "test",
    settings: RasterSettings = RasterSettings(),
) -> list[dict]:
    """Held-out PSNR per (frame, camera) via playback rendering."""
    ids = dataset.test_ids() if split == "test" else dataset.train_ids()
    if not ids:
        raise DataError(f"dataset has no {split!r} cameras")
    n = min(stream.n_frames, len(dataset))
    rows = []
    for index in range(n):
        cloud = materialize_frame(stream, index)
        frame = dataset.frame(index, ids)
        background = np.asarray(
            stream.header.get("background", [0, 0, 0]), dtype=float
        )
        for cam_id in ids:
            out, _ = rasterize_forward(
                cloud, dataset.cameras[cam_id], background, settings
            )
            rows.append(
                {
                    "frame": index,
                    "camera": cam_id,
                    "psnr": psnr(out.image, frame.images[cam_id]),
                }
            )
    return rows

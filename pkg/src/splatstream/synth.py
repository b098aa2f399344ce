"""Synthetic multi-view video generator with known ground truth.

Scenes are clusters of Gaussians on a backdrop slab, filmed by a frontal
camera arc. Motion is scripted: none, a constant per-frame translation of
the cluster, or a blob that pops into existence at a chosen frame. The
generator writes a dataset directory (manifest + PNG frames + initial point
set) plus a truth file recording the script, so tests can score recovered
motion and emergence against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import Camera, look_at
from .dataset import save_image, write_manifest, write_ply
from .errors import DataError
from .gaussians import GaussianCloud, inverse_sigmoid, quat_normalize
from .rasterizer import RasterSettings, rasterize_forward
from .sh import SH_C0

TRUTH_FILENAME = "truth.json"


@dataclass
class SynthConfig:
    """Scene script and rig layout."""

    motion: str = "static"  # static | rigid | emerging
    n_gaussians: int = 12
    n_frames: int = 20
    n_train_cameras: int = 5
    n_test_cameras: int = 2
    image_size: int = 64
    focal: float = 70.0
    camera_radius: float = 3.0
    camera_spread: float = 1.0  # arc half-angle in radians
    cluster_radius: float = 0.55
    scale_range: tuple = (0.07, 0.14)
    translation: tuple = (0.012, 0.006, -0.008)  # per-frame shift for "rigid"
    emerge_frame: int = 10
    blob_sigma: float = 0.2
    blob_brightness: float = 0.45
    blob_opacity: float = 0.85
    point_jitter: float = 0.05  # fraction of the cluster radius
    point_keep: float = 1.0  # survival rate of the exported point set
    seed: int = 0

    def __post_init__(self) -> None:
        if self.motion not in ("static", "rigid", "emerging"):
            raise DataError(f"unknown motion script: {self.motion!r}")
        if self.n_gaussians < 1 or self.n_frames < 1:
            raise DataError("need at least one Gaussian and one frame")
        if self.n_train_cameras < 1:
            raise DataError("need at least one training camera")
        if self.motion == "emerging" and not 0 < self.emerge_frame < self.n_frames:
            raise DataError("emerge_frame must fall inside the frame range")
        if not 0.0 < self.point_keep <= 1.0:
            raise DataError("point_keep must be in (0, 1]")


def make_rig(cfg: SynthConfig) -> list[tuple[str, Camera, str]]:
    """Cameras on a frontal arc; test cameras interleave the training ones."""
    total = cfg.n_train_cameras + cfg.n_test_cameras
    cams = []
    for k in range(total):
        a = cfg.camera_spread * (2.0 * k / max(1, total - 1) - 1.0)
        eye = np.array(
            [
                cfg.camera_radius * np.sin(a),
                0.35 * np.sin(2.3 * a + 0.4),
                -cfg.camera_radius * np.cos(a),
            ]
        )
        cam = look_at(
            eye,
            np.zeros(3),
            np.array([0.0, -1.0, 0.0]),
            fx=cfg.focal,
            fy=cfg.focal,
            cx=(cfg.image_size - 1) / 2,
            cy=(cfg.image_size - 1) / 2,
            width=cfg.image_size,
            height=cfg.image_size,
        )
        cams.append((f"cam{k:02d}", cam))
    # spread the held-out cameras evenly through the arc
    test_slots = set()
    if cfg.n_test_cameras > 0:
        step = total / cfg.n_test_cameras
        test_slots = {min(total - 1, int((j + 0.5) * step)) for j in range(cfg.n_test_cameras)}
    out = []
    for k, (cam_id, cam) in enumerate(cams):
        out.append((cam_id, cam, "test" if k in test_slots else "train"))
    return out


def make_base_cloud(cfg: SynthConfig, rng: np.random.Generator) -> GaussianCloud:
    """Cluster of colored Gaussians plus a dim backdrop slab behind them."""
    n = cfg.n_gaussians
    means = rng.normal(scale=cfg.cluster_radius / 1.8, size=(n, 3))
    means = np.clip(means, -cfg.cluster_radius, cfg.cluster_radius)
    rotations = quat_normalize(rng.normal(size=(n, 4)))
    lo, hi = cfg.scale_range
    log_scales = np.log(rng.uniform(lo, hi, size=(n, 3)))
    opacity = rng.uniform(0.55, 0.9, size=n)
    sh = np.zeros((n, 4, 3))
    sh[:, 0, :] = rng.uniform(-0.3, 0.3, size=(n, 3)) / SH_C0
    sh[:, 1:, :] = rng.uniform(-0.04, 0.04, size=(n, 3, 3))
    cluster = GaussianCloud(
        means=means,
        rotations=rotations,
        log_scales=log_scales,
        opacity_logits=inverse_sigmoid(opacity),
        sh=sh,
    )

    # backdrop: a coarse wall of wide flat Gaussians behind the cluster,
    # so emptiness has structure and the loss sees occlusion errors
    axis = np.linspace(-1.2, 1.2, 4)
    bx, by = np.meshgrid(axis, axis, indexing="ij")
    m = bx.size
    wall_means = np.stack([bx.ravel(), by.ravel(), np.full(m, 1.1)], axis=1)
    wall_rot = np.zeros((m, 4))
    wall_rot[:, 0] = 1.0
    wall_scales = np.tile(np.log([0.45, 0.45, 0.02]), (m, 1))
    wall_sh = np.zeros((m, 4, 3))
    wall_sh[:, 0, :] = rng.uniform(-0.25, -0.05, size=(m, 1)) / SH_C0
    wall = GaussianCloud(
        means=wall_means,
        rotations=wall_rot,
        log_scales=wall_scales,
        opacity_logits=np.full(m, inverse_sigmoid(0.92)),
        sh=wall_sh,
    )
    return GaussianCloud.concatenate(cluster, wall)


def make_blob(cfg: SynthConfig, base: GaussianCloud, rng: np.random.Generator) -> GaussianCloud:
    """The emerging object: a bright ball near the cluster's edge."""
    center = np.array([0.28, -0.2, -0.25])
    sh = np.zeros((1, 4, 3))
    sh[0, 0, :] = np.array([1.0, 0.9, 0.4]) * cfg.blob_brightness / SH_C0
    return GaussianCloud(
        means=center[None, :],
        rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        log_scales=np.full((1, 3), np.log(cfg.blob_sigma)),
        opacity_logits=np.array([inverse_sigmoid(cfg.blob_opacity)]),
        sh=sh,
    )


def scene_at_frame(
    base: GaussianCloud, blob: GaussianCloud | None, cfg: SynthConfig, index: int
) -> GaussianCloud:
    cloud = base.copy()
    if cfg.motion == "rigid":
        cloud.means += index * np.asarray(cfg.translation)
    if cfg.motion == "emerging" and blob is not None and index >= cfg.emerge_frame:
        cloud = GaussianCloud.concatenate(cloud, blob)
    return cloud


def generate_dataset(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Render the scripted scene to a dataset directory; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    base = make_base_cloud(cfg, rng)
    blob = make_blob(cfg, base, rng) if cfg.motion == "emerging" else None
    rig = make_rig(cfg)
    background = np.zeros(3)
    settings = RasterSettings()

    frame_images = []
    for i in range(cfg.n_frames):
        cloud = scene_at_frame(base, blob, cfg, i)
        images = {}
        for cam_id, cam, _split in rig:
            out, _ = rasterize_forward(cloud, cam, background, settings)
            rel = f"frames/f{i:04d}_{cam_id}.png"
            save_image(out_dir / rel, out.image)
            images[cam_id] = rel
        frame_images.append(images)

    # initial point set: jittered ground-truth means, optionally downsampled
    pts = base.means.copy()
    keep = rng.random(len(pts)) < cfg.point_keep
    keep[0] = True
    pts = pts[keep]
    pts += rng.normal(scale=cfg.point_jitter * cfg.cluster_radius, size=pts.shape)
    write_ply(out_dir / "points.ply", pts)

    truth = {
        "motion": cfg.motion,
        "n_frames": cfg.n_frames,
        "per_frame_translation": list(cfg.translation)
        if cfg.motion == "rigid"
        else [0.0, 0.0, 0.0],
        "emerge_frame": cfg.emerge_frame if cfg.motion == "emerging" else None,
        "blob": None
        if blob is None
        else {
            "center": blob.means[0].tolist(),
            "sigma": cfg.blob_sigma,
        },
        "bounds_min": base.means.min(axis=0).tolist(),
        "bounds_max": base.means.max(axis=0).tolist(),
    }
    (out_dir / TRUTH_FILENAME).write_text(json.dumps(truth, indent=2, sort_keys=True))

    return write_manifest(
        out_dir,
        rig,
        frame_images,
        background,
        points_rel="points.ply",
    )


def load_truth(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / TRUTH_FILENAME
    if not path.exists():
        raise DataError(f"truth file not found: {path}")
    return json.loads(path.read_text())

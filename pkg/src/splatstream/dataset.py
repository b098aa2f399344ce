"""Multi-view video datasets: JSON manifest, PNG frames, PLY point sets.

A dataset directory holds a manifest describing cameras (with a train/test
split) and an ordered frame list mapping camera ids to image paths. Poses
are row-major 4x4 world-to-camera matrices. Images are 8-bit RGB PNGs
normalized to [0, 1] on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .cameras import Camera
from .errors import DataError

MANIFEST_VERSION = 1


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] as 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(str(path))


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def write_ply(path: str | Path, points: np.ndarray) -> None:
    """Binary little-endian PLY with float32 vertex positions."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DataError(f"points must be (N, 3), got {points.shape}")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(points.astype("<f4").tobytes())


def read_ply(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"point file not found: {path}")
    with open(path, "rb") as f:
        header_lines = []
        while True:
            line = f.readline()
            if not line:
                raise DataError(f"truncated PLY header in {path}")
            header_lines.append(line.decode("ascii", "replace").strip())
            if header_lines[-1] == "end_header":
                break
        if header_lines[0] != "ply":
            raise DataError(f"not a PLY file: {path}")
        if "format binary_little_endian 1.0" not in header_lines:
            raise DataError(f"unsupported PLY format in {path}")
        count = None
        props = []
        for line in header_lines:
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
            elif line.startswith("property"):
                props.append(line.split()[-1])
        if count is None or props[:3] != ["x", "y", "z"]:
            raise DataError(f"PLY must carry x/y/z vertex floats: {path}")
        raw = f.read(4 * len(props) * count)
        if len(raw) != 4 * len(props) * count:
            raise DataError(f"truncated PLY payload in {path}")
    data = np.frombuffer(raw, dtype="<f4").reshape(count, len(props))
    return data[:, :3].astype(np.float64)


def camera_to_dict(cam_id: str, camera: Camera, split: str) -> dict:
    return {
        "id": cam_id,
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
        "near_clip": camera.near_clip,
        "world_to_camera": camera.world_to_camera.tolist(),
        "split": split,
    }


def camera_from_dict(entry: dict) -> Camera:
    try:
        w2c = np.asarray(entry["world_to_camera"], dtype=np.float64)
        return Camera(
            world_to_camera=w2c,
            fx=float(entry["fx"]),
            fy=float(entry["fy"]),
            cx=float(entry["cx"]),
            cy=float(entry["cy"]),
            width=int(entry["width"]),
            height=int(entry["height"]),
            near_clip=float(entry.get("near_clip", 0.01)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed camera entry {entry.get('id')!r}: {exc}") from exc


@dataclass
class FrameData:
    index: int
    images: dict[str, np.ndarray]  # camera id -> HxWx3 float in [0, 1]


class Dataset:
    """Loaded manifest with lazy image access.

    The training loop should consume `iter_frames()`, which yields frames in
    stream order; `frame(i)` exists for offline evaluation.
    """

    def __init__(self, manifest_path: str | Path):
        self.root = Path(manifest_path).parent
        path = Path(manifest_path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest is not valid JSON: {path}: {exc}") from exc
        if manifest.get("version") != MANIFEST_VERSION:
            raise DataError(
                f"manifest version {manifest.get('version')!r} unsupported "
                f"(expected {MANIFEST_VERSION})"
            )
        self.manifest = manifest
        self.cameras: dict[str, Camera] = {}
        self.splits: dict[str, str] = {}
        for entry in manifest.get("cameras", []):
            cam_id = entry.get("id")
            if not cam_id or cam_id in self.cameras:
                raise DataError(f"duplicate or missing camera id: {cam_id!r}")
            self.cameras[cam_id] = camera_from_dict(entry)
            self.splits[cam_id] = entry.get("split", "train")
        if not self.train_ids():
            raise DataError("manifest defines no training cameras")
        self._frames = manifest.get("frames", [])
        for k, frame in enumerate(self._frames):
            if frame.get("index") != k:
                raise DataError(f"frame list not contiguous at position {k}")
            missing = set(self.train_ids()) - set(frame.get("images", {}))
            if missing:
                raise DataError(
                    f"frame {k} missing images for cameras: {sorted(missing)}"
                )
        self.background = np.asarray(
            manifest.get("background", [0.0, 0.0, 0.0]), dtype=np.float64
        )

    def train_ids(self) -> list[str]:
        return [c for c, s in self.splits.items() if s == "train"]

    def test_ids(self) -> list[str]:
        return [c for c, s in self.splits.items() if s == "test"]

    def __len__(self) -> int:
        return len(self._frames)

    def points(self) -> np.ndarray:
        rel = self.manifest.get("points")
        if rel is None:
            raise DataError("manifest carries no initial point set")
        return read_ply(self.root / rel)

    def frame(self, index: int, camera_ids: list[str] | None = None) -> FrameData:
        if not 0 <= index < len(self._frames):
            raise DataError(f"frame index {index} out of range [0, {len(self)})")
        entry = self._frames[index]
        ids = camera_ids if camera_ids is not None else list(self.cameras)
        images = {}
        for cam_id in ids:
            rel = entry["images"].get(cam_id)
            if rel is None:
                raise DataError(f"frame {index} has no image for camera {cam_id!r}")
            img = load_image(self.root / rel)
            cam = self.cameras[cam_id]
            if img.shape != (cam.height, cam.width, 3):
                raise DataError(
                    f"frame {index} camera {cam_id!r}: image shape {img.shape} "
                    f"does not match camera ({cam.height}, {cam.width}, 3)"
                )
            images[cam_id] = img
        return FrameData(index=index, images=images)

    def iter_frames(self, camera_ids: list[str] | None = None) -> Iterator[FrameData]:
        for index in range(len(self._frames)):
            yield self.frame(index, camera_ids)

    def train_views(self, frame: FrameData) -> list[tuple[Camera, np.ndarray]]:
        return [(self.cameras[c], frame.images[c]) for c in self.train_ids()]


def write_manifest(
    out_dir: str | Path,
    cameras: list[tuple[str, Camera, str]],
    frame_images: list[dict[str, str]],
    background: np.ndarray,
    points_rel: str | None = None,
    extra: dict | None = None,
) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "version": MANIFEST_VERSION,
        "cameras": [camera_to_dict(c, cam, split) for c, cam, split in cameras],
        "frames": [
            {"index": k, "images": images} for k, images in enumerate(frame_images)
        ],
        "background": np.asarray(background, dtype=float).tolist(),
    }
    if points_rel is not None:
        manifest["points"] = points_rel
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path

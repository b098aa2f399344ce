"""Binary stream container and the viewer export bundle.

Container layout (all little-endian):

    magic   4 bytes  b"SPLV"
    version u32      1
    blocks  ...      tag (4 ascii bytes) + payload length (u64) + payload
                     + crc32 of the payload (u32)

Block order is HEAD (canonical JSON: configs, cameras, background), INIT
(initial Gaussian cloud), WARM (warmed-up transformation cache), then one
FREC per streamed frame. Every block is self-delimiting, so a reader can
walk the file without an index; every payload is checksummed.

Cloud payloads are a u32 count followed by float32 arrays in field order
(means, rotations, log_scales, opacity_logits, sh). Cache payloads carry a
fixed-size config header followed by the feature tables and the MLP weights
and biases in declaration order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gaussians import GaussianCloud
from .ntc import HashGridConfig, NeuralTransformationCache

MAGIC = b"SPLV"
VERSION = 1

# tag + payload length + crc32
BLOCK_OVERHEAD = 4 + 8 + 4
# frame index + two embedded payload lengths
FRAME_PAYLOAD_OVERHEAD = 4 + 8 + 8
FRAME_BLOCK_OVERHEAD = BLOCK_OVERHEAD + FRAME_PAYLOAD_OVERHEAD

_CLOUD_FIELDS = ("means", "rotations", "log_scales", "opacity_logits", "sh")


def serialize_cloud(cloud: GaussianCloud) -> bytes:
    parts = [struct.pack("<I", len(cloud))]
    for name in _CLOUD_FIELDS:
        parts.append(getattr(cloud, name).astype("<f4").tobytes())
    return b"".join(parts)


def deserialize_cloud(data: bytes) -> GaussianCloud:
    if len(data) < 4:
        raise FormatError("cloud payload shorter than its count field")
    (count,) = struct.unpack_from("<I", data, 0)
    shapes = {
        "means": (count, 3),
        "rotations": (count, 4),
        "log_scales": (count, 3),
        "opacity_logits": (count,),
        "sh": (count, 4, 3),
    }
    expected = 4 + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != expected:
        raise FormatError(
            f"cloud payload is {len(data)} bytes, expected {expected} for "
            f"{count} Gaussians"
        )
    offset = 4
    arrays = {}
    for name in _CLOUD_FIELDS:
        n = int(np.prod(shapes[name]))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        arrays[name] = arr.astype(np.float64).reshape(shapes[name])
        offset += 4 * n
    return GaussianCloud(**arrays)


_NTC_HEADER = struct.Struct("<IIIId6dIII")


def serialize_ntc(cache: NeuralTransformationCache) -> bytes:
    g = cache.grid
    parts = [
        _NTC_HEADER.pack(
            g.n_levels,
            g.n_features,
            g.table_size_log2,
            g.base_resolution,
            g.growth_factor,
            *np.asarray(g.aabb_min, dtype=float),
            *np.asarray(g.aabb_max, dtype=float),
            cache.hidden_layers,
            cache.hidden_dim,
            cache.weights[-1].shape[1],
        )
    ]
    parts.append(np.ascontiguousarray(cache.tables).astype("<f4").tobytes())
    for w, b in zip(cache.weights, cache.biases):
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    return b"".join(parts)


def deserialize_ntc(data: bytes) -> NeuralTransformationCache:
    if len(data) < _NTC_HEADER.size:
        raise FormatError("cache payload shorter than its header")
    fields = _NTC_HEADER.unpack_from(data, 0)
    n_levels, n_features, log2, base = fields[0:4]
    growth = fields[4]
    aabb = fields[5:11]
    hidden_layers, hidden_dim, n_outputs = fields[11:14]
    grid = HashGridConfig(
        n_levels=n_levels,
        n_features=n_features,
        table_size_log2=log2,
        base_resolution=base,
        growth_factor=growth,
        aabb_min=tuple(aabb[:3]),
        aabb_max=tuple(aabb[3:]),
    )
    cache = NeuralTransformationCache(
        grid, hidden_layers=hidden_layers, hidden_dim=hidden_dim
    )
    if cache.weights[-1].shape[1] != n_outputs:
        raise FormatError(f"cache output width {n_outputs} unsupported")

    offset = _NTC_HEADER.size

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        if offset + 4 * n > len(data):
            raise FormatError("truncated cache payload")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        return arr.astype(np.float64).reshape(shape)

    cache.tables[:] = take(cache.tables.shape)
    for w, b in zip(cache.weights, cache.biases):
        w[:] = take(w.shape)
        b[:] = take(b.shape)
    if offset != len(data):
        raise FormatError(
            f"cache payload has {len(data) - offset} trailing bytes"
        )
    cache.reset_adam()
    return cache


@dataclass
class FrameRecord:
    """Per-frame stream payload: cache weights plus additional Gaussians."""

    frame_index: int
    ntc_blob: bytes
    additional: GaussianCloud

    def cache(self) -> NeuralTransformationCache:
        return deserialize_ntc(self.ntc_blob)

    def sizes(self) -> dict[str, int]:
        additional_bytes = len(serialize_cloud(self.additional))
        return {
            "ntc_bytes": len(self.ntc_blob),
            "additional_bytes": additional_bytes,
            "overhead_bytes": FRAME_BLOCK_OVERHEAD,
            "total_bytes": len(self.ntc_blob)
            + additional_bytes
            + FRAME_BLOCK_OVERHEAD,
        }


def _pack_block(tag: bytes, payload: bytes) -> bytes:
    return (
        tag
        + struct.pack("<Q", len(payload))
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )


class StreamWriter:
    """Writes blocks as they are produced; each frame is flushed immediately."""

    def __init__(self, path: str | Path, header: dict):
        self._f = open(path, "wb")
        self._f.write(MAGIC + struct.pack("<I", VERSION))
        payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        self._f.write(_pack_block(b"HEAD", payload))
        self._next_frame = 1

    def write_initial(self, cloud: GaussianCloud) -> None:
        self._f.write(_pack_block(b"INIT", serialize_cloud(cloud)))

    def write_warmup(self, cache: NeuralTransformationCache) -> None:
        self._f.write(_pack_block(b"WARM", serialize_ntc(cache)))

    def write_frame(self, record: FrameRecord) -> None:
        if record.frame_index != self._next_frame:
            raise FormatError(
                f"frame records must be consecutive: expected {self._next_frame}, "
                f"got {record.frame_index}"
            )
        cloud_blob = serialize_cloud(record.additional)
        payload = (
            struct.pack("<I", record.frame_index)
            + struct.pack("<Q", len(record.ntc_blob))
            + record.ntc_blob
            + struct.pack("<Q", len(cloud_blob))
            + cloud_blob
        )
        self._f.write(_pack_block(b"FREC", payload))
        self._f.flush()
        self._next_frame += 1

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "StreamWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class StreamData:
    header: dict
    initial_cloud: GaussianCloud
    warm_blob: bytes
    records: list[FrameRecord]

    @property
    def n_frames(self) -> int:
        """Total playable frames, counting frame 0."""
        return len(self.records) + 1

    def warm_cache(self) -> NeuralTransformationCache:
        return deserialize_ntc(self.warm_blob)


def _iter_blocks(data: bytes, path: Path):
    offset = len(MAGIC) + 4
    index = 0
    while offset < len(data):
        if offset + 12 > len(data):
            raise FormatError(f"{path}: truncated block header at byte {offset}")
        tag = data[offset : offset + 4]
        (length,) = struct.unpack_from("<Q", data, offset + 4)
        start = offset + 12
        end = start + length
        if end + 4 > len(data):
            raise FormatError(
                f"{path}: block {index} ({tag!r}) truncated "
                f"(need {length} payload bytes)"
            )
        payload = data[start:end]
        (crc,) = struct.unpack_from("<I", data, end)
        if zlib.crc32(payload) != crc:
            raise FormatError(
                f"{path}: checksum mismatch in block {index} ({tag.decode('ascii', 'replace')})"
            )
        yield tag, payload
        offset = end + 4
        index += 1


def read_stream(path: str | Path) -> StreamData:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"stream not found: {path}")
    data = path.read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a stream container (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")

    header = None
    initial = None
    warm = None
    records: list[FrameRecord] = []
    for tag, payload in _iter_blocks(data, path):
        if tag == b"HEAD":
            header = json.loads(payload.decode())
        elif tag == b"INIT":
            initial = deserialize_cloud(payload)
        elif tag == b"WARM":
            warm = payload
        elif tag == b"FREC":
            if len(payload) < 12:
                raise FormatError(f"{path}: frame record too short")
            (frame_index,) = struct.unpack_from("<I", payload, 0)
            (ntc_len,) = struct.unpack_from("<Q", payload, 4)
            ntc_blob = payload[12 : 12 + ntc_len]
            pos = 12 + ntc_len
            (cloud_len,) = struct.unpack_from("<Q", payload, pos)
            cloud_blob = payload[pos + 8 : pos + 8 + cloud_len]
            if len(ntc_blob) != ntc_len or len(cloud_blob) != cloud_len:
                raise FormatError(
                    f"{path}: frame {frame_index} record truncated"
                )
            expected = len(records) + 1
            if frame_index != expected:
                raise FormatError(
                    f"{path}: frame records out of order "
                    f"(expected {expected}, got {frame_index})"
                )
            records.append(
                FrameRecord(
                    frame_index=frame_index,
                    ntc_blob=bytes(ntc_blob),
                    additional=deserialize_cloud(cloud_blob),
                )
            )
        else:
            raise FormatError(f"{path}: unknown block tag {tag!r}")
    if header is None or initial is None or warm is None:
        raise FormatError(f"{path}: missing HEAD, INIT, or WARM block")
    return StreamData(
        header=header, initial_cloud=initial, warm_blob=warm, records=records
    )


VIEWER_BUNDLE_VERSION = 1


def serialize_viewer_frame(cloud: GaussianCloud) -> bytes:
    """Activated struct-of-arrays snapshot for renderers without activations.

    u32 count, then float32 runs: means (N,3), unit quaternions wxyz (N,4),
    scales (N,3), opacities (N,), SH (N,4,3) with rows ordered DC, y, z, x.
    """
    parts = [struct.pack("<I", len(cloud))]
    parts.append(cloud.means.astype("<f4").tobytes())
    parts.append(cloud.unit_rotations().astype("<f4").tobytes())
    parts.append(cloud.scales.astype("<f4").tobytes())
    parts.append(cloud.opacities.astype("<f4").tobytes())
    parts.append(cloud.sh.astype("<f4").tobytes())
    return b"".join(parts)


def export_viewer_bundle(
    out_dir: str | Path,
    frames: list[GaussianCloud],
    cameras: list[dict],
    background,
) -> Path:
    """Write materialized per-frame render sets plus a metadata file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = []
    for k, cloud in enumerate(frames):
        (out_dir / f"frame_{k:04d}.bin").write_bytes(serialize_viewer_frame(cloud))
        counts.append(len(cloud))
    meta = {
        "version": VIEWER_BUNDLE_VERSION,
        "frame_count": len(frames),
        "gaussian_counts": counts,
        "cameras": cameras,
        "background": list(np.asarray(background, dtype=float)),
        "conventions": {
            "coordinates": "x right, y down, z forward; world_to_camera is a row-major 4x4",
            "pixel_origin": "pixel (0, 0) is the center of the top-left pixel",
            "fields": "u32 count, then f32 runs: means(N,3) quats_wxyz(N,4) scales(N,3) opacities(N) sh(N,4,3)",
            "sh_basis": "[0.28209479177387814, 0.4886025119029199*y, 0.4886025119029199*z, 0.4886025119029199*x] for the unit direction (x,y,z) from camera center to the splat",
            "color": "clamp(0.5 + sum_i basis[i] * sh[i][channel], 0, 1)",
            "blending": "front-to-back; alpha = min(0.99, opacity * exp(-0.5 * m2)); skip alpha < 1/255; stop when transmittance < 1e-4; remaining transmittance takes the background",
            "lowpass_px2": 0.3,
        },
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out_dir

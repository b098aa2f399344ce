"""Regenerate the cross-implementation test fixtures.

Trains a tiny rigid-motion stream with the primary package, exports its
viewer bundle, and renders reference images of every exported frame at three
fixed cameras with the primary rasterizer. The TypeScript renderer is tested
against these files byte for byte (references are float32 HxWx3 raw dumps).

Run from the repository root after `pip install -e .`:

    python3 frontend/scripts/make_fixtures.py
"""

import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from splatstream.dataset import Dataset, camera_from_dict
from splatstream.ntc import HashGridConfig
from splatstream.pipeline import (
    PipelineConfig,
    materialize_frame,
    process_stream,
)
from splatstream.rasterizer import rasterize_forward
from splatstream.streamio import export_viewer_bundle, read_stream
from splatstream.synth import SynthConfig, generate_dataset

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
N_REF_CAMERAS = 3


def main() -> None:
    work = Path(tempfile.mkdtemp(prefix="viewer-fixtures-"))
    synth = SynthConfig(
        motion="rigid",
        n_frames=3,
        n_gaussians=8,
        image_size=32,
        n_train_cameras=4,
        n_test_cameras=1,
        seed=11,
    )
    generate_dataset(synth, work / "data")
    dataset = Dataset(work / "data" / "manifest.json")

    cfg = PipelineConfig(
        frame0_iterations=200,
        densify_until=150,
        warmup_iterations=60,
        stage1_iterations=40,
        stage2_iterations=10,
        grid=HashGridConfig(
            n_levels=4, n_features=2, table_size_log2=10,
            base_resolution=8, growth_factor=1.6,
        ),
        hidden_dim=32,
    )
    stream_path = work / "scene.splv"
    process_stream(dataset, cfg, stream_path)
    stream = read_stream(stream_path)

    clouds = [materialize_frame(stream, k) for k in range(stream.n_frames)]
    bundle_dir = FIXTURES / "bundle"
    if bundle_dir.exists():
        shutil.rmtree(bundle_dir)
    export_viewer_bundle(
        bundle_dir,
        clouds,
        stream.header["cameras"],
        stream.header.get("background", [0.0, 0.0, 0.0]),
    )

    refs_dir = FIXTURES / "refs"
    if refs_dir.exists():
        shutil.rmtree(refs_dir)
    refs_dir.mkdir(parents=True)
    background = np.asarray(stream.header.get("background", [0.0, 0.0, 0.0]), dtype=float)
    entries = stream.header["cameras"][:N_REF_CAMERAS]
    refs = []
    for k, cloud in enumerate(clouds):
        for entry in entries:
            camera = camera_from_dict(entry)
            out, _ = rasterize_forward(cloud, camera, background)
            name = f"ref_f{k}_{entry['id']}.bin"
            (refs_dir / name).write_bytes(out.image.astype("<f4").tobytes())
            refs.append({"frame": k, "camera": entry["id"], "file": name})
    manifest = {
        "width": entries[0]["width"],
        "height": entries[0]["height"],
        "frame_count": stream.n_frames,
        "background": background.tolist(),
        "refs": refs,
    }
    (refs_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    counts = [len(c) for c in clouds]
    print(f"bundle: {bundle_dir} (frames={stream.n_frames}, counts={counts})")
    print(f"refs:   {refs_dir} ({len(refs)} images)")


if __name__ == "__main__":
    main()

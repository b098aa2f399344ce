"""Per-frame CSV logs and report figures.

The stream log carries one row per frame with counts, PSNR, timings, and the
storage split. Byte columns decompose exactly (total = ntc + additional +
overhead); the KB columns present the same split rounded for reading. The
report renderer turns a log (plus an optional held-out evaluation log) into
PNG figures.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError

STREAM_LOG_COLUMNS = [
    "frame",
    "n_gaussians",
    "n_additional",
    "train_psnr",
    "stage1_final_loss",
    "stage2_final_loss",
    "stage1_seconds",
    "stage2_seconds",
    "ntc_bytes",
    "additional_bytes",
    "overhead_bytes",
    "total_bytes",
    "NTC (KB)",
    "New 3DGs (KB)",
    "Total (KB)",
]

EVAL_LOG_COLUMNS = ["frame", "camera", "psnr"]


def _kb(n_bytes: int) -> str:
    return f"{n_bytes / 1024:.3f}"


def write_stream_log(path: str | Path, summaries) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=STREAM_LOG_COLUMNS)
        writer.writeheader()
        for s in summaries:
            overhead = s.total_bytes - s.ntc_bytes - s.additional_bytes
            writer.writerow(
                {
                    "frame": s.frame_index,
                    "n_gaussians": s.n_gaussians,
                    "n_additional": s.n_additional,
                    "train_psnr": f"{s.train_psnr:.4f}",
                    "stage1_final_loss": f"{s.stage1_losses[-1]:.6g}"
                    if s.stage1_losses
                    else "",
                    "stage2_final_loss": f"{s.stage2_losses[-1]:.6g}"
                    if s.stage2_losses
                    else "",
                    "stage1_seconds": f"{s.stage1_seconds:.3f}",
                    "stage2_seconds": f"{s.stage2_seconds:.3f}",
                    "ntc_bytes": s.ntc_bytes,
                    "additional_bytes": s.additional_bytes,
                    "overhead_bytes": overhead,
                    "total_bytes": s.total_bytes,
                    "NTC (KB)": _kb(s.ntc_bytes),
                    "New 3DGs (KB)": _kb(s.additional_bytes),
                    "Total (KB)": _kb(s.total_bytes),
                }
            )
    return path


def _coerce(row: dict) -> dict:
    out = {}
    for key, value in row.items():
        if value == "" or value is None:
            out[key] = None
        else:
            try:
                num = float(value)
                out[key] = int(num) if num == int(num) and "." not in value else num
            except ValueError:
                out[key] = value
    return out


def read_stream_log(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"log not found: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(STREAM_LOG_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise DataError(
                f"log {path} is missing columns: {sorted(missing)}"
            )
        return [_coerce(row) for row in reader]


def write_eval_log(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "frame": row["frame"],
                    "camera": row["camera"],
                    "psnr": f"{row['psnr']:.4f}",
                }
            )
    return path


def read_eval_log(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"log not found: {path}")
    with open(path, newline="") as f:
        return [_coerce(row) for row in csv.DictReader(f)]


def render_report(
    out_dir: str | Path, log_rows: list[dict], eval_rows: list[dict] | None = None
) -> list[Path]:
    """PNG figures summarizing a stream run; returns the written paths."""
    if not log_rows:
        raise DataError("stream log has no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = [r["frame"] for r in log_rows]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frames, [r["train_psnr"] for r in log_rows], "o-", label="train")
    if eval_rows:
        by_frame: dict[int, list[float]] = {}
        for row in eval_rows:
            by_frame.setdefault(row["frame"], []).append(row["psnr"])
        eval_frames = sorted(by_frame)
        ax.plot(
            eval_frames,
            [float(np.mean(by_frame[k])) for k in eval_frames],
            "s--",
            label="held-out",
        )
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "psnr_per_frame.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frames, [r["n_gaussians"] for r in log_rows], "o-", label="render set")
    ax.plot(frames, [r["n_additional"] for r in log_rows], "s-", label="additional")
    ax.set_xlabel("frame")
    ax.set_ylabel("Gaussians")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "gaussian_counts.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ntc_kb = np.array([r["ntc_bytes"] for r in log_rows]) / 1024
    add_kb = np.array([r["additional_bytes"] for r in log_rows]) / 1024
    ovh_kb = np.array([r["overhead_bytes"] for r in log_rows]) / 1024
    ax.bar(frames, ntc_kb, label="NTC (KB)")
    ax.bar(frames, add_kb, bottom=ntc_kb, label="New 3DGs (KB)")
    ax.bar(frames, ovh_kb, bottom=ntc_kb + add_kb, label="overhead (KB)")
    ax.set_xlabel("frame")
    ax.set_ylabel("stream size (KB)")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "storage_per_frame.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    losses1 = [r["stage1_final_loss"] for r in log_rows]
    losses2 = [r["stage2_final_loss"] for r in log_rows]
    axes[0].plot(frames, [v if v is not None else np.nan for v in losses1], "o-",
                 label="stage 1")
    axes[0].plot(frames, [v if v is not None else np.nan for v in losses2], "s-",
                 label="stage 2")
    axes[0].set_xlabel("frame")
    axes[0].set_ylabel("final loss")
    axes[0].legend()
    axes[0].grid(True, alpha=0.3)
    axes[1].plot(frames, [r["stage1_seconds"] for r in log_rows], "o-", label="stage 1")
    axes[1].plot(frames, [r["stage2_seconds"] for r in log_rows], "s-", label="stage 2")
    axes[1].set_xlabel("frame")
    axes[1].set_ylabel("seconds")
    axes[1].legend()
    axes[1].grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "loss_and_time.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    return written

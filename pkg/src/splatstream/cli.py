"""Command-line entry points over the library.

Subcommands: synth (generate a scripted dataset), stream (train and write a
stream plus a CSV log), eval (held-out PSNR via playback), export (viewer
bundle), report (figures from logs), config (dump the effective config).

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (training aborts on the first non-finite value, naming the tensor).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    apply_overrides,
    build_pipeline_config,
    build_synth_config,
    default_config,
    load_config,
)
from .dataset import Dataset
from .errors import DataError, FormatError, NumericalError
from .pipeline import evaluate_stream, materialize_frame, process_stream
from .report import (
    read_eval_log,
    read_stream_log,
    render_report,
    write_eval_log,
    write_stream_log,
)
from .streamio import export_viewer_bundle, read_stream
from .synth import generate_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; we reserve 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.exit_with(message))

    def exit_with(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return EXIT_USAGE


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted-key config override, e.g. pipeline.stage1_iterations=250",
    )
    p.add_argument("--seed", type=int, help="overrides pipeline.seed and synth.seed")


def _effective_config(args) -> dict:
    config = load_config(args.config) if args.config else default_config()
    apply_overrides(config, args.overrides)
    if getattr(args, "seed", None) is not None:
        config["pipeline"]["seed"] = args.seed
        config["synth"]["seed"] = args.seed
    return config


def _dataset_manifest(path: Path) -> Path:
    return path / "manifest.json" if path.is_dir() else path


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _limit_threads(n: int) -> None:
    if n < 1:
        raise DataError("--threads must be >= 1")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:  # pragma: no cover - soft dependency
        pass


def cmd_synth(args) -> int:
    config = _effective_config(args)
    cfg = build_synth_config(config)
    manifest = generate_dataset(cfg, args.out)
    print(f"wrote {cfg.n_frames}-frame {cfg.motion} dataset: {manifest}")
    return EXIT_OK


def cmd_stream(args) -> int:
    _limit_threads(args.threads)
    config = _effective_config(args)
    cfg = build_pipeline_config(config)
    dataset = Dataset(_dataset_manifest(args.dataset))
    summaries, _ = process_stream(dataset, cfg, _ensure_parent(args.out))
    log_path = args.log if args.log else args.out.with_suffix(".csv")
    write_stream_log(_ensure_parent(log_path), summaries)
    for s in summaries:
        print(
            f"frame {s.frame_index}: psnr={s.train_psnr:.2f} dB "
            f"gaussians={s.n_gaussians} additional={s.n_additional} "
            f"ntc={s.ntc_bytes / 1024:.1f} KB new3dgs={s.additional_bytes / 1024:.1f} KB"
        )
    print(f"wrote stream: {args.out}")
    print(f"wrote log: {log_path}")
    if args.report:
        written = render_report(args.report, read_stream_log(log_path))
        for path in written:
            print(f"wrote figure: {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    stream = read_stream(args.stream)
    dataset = Dataset(_dataset_manifest(args.dataset))
    rows = evaluate_stream(stream, dataset, split=args.split)
    by_frame: dict[int, list[float]] = {}
    for row in rows:
        by_frame.setdefault(row["frame"], []).append(row["psnr"])
    for frame in sorted(by_frame):
        print(f"frame {frame}: psnr={np.mean(by_frame[frame]):.2f} dB")
    print(f"mean psnr: {np.mean([r['psnr'] for r in rows]):.2f} dB")
    if args.out:
        write_eval_log(_ensure_parent(args.out), rows)
        print(f"wrote log: {args.out}")
    return EXIT_OK


def _parse_frame_range(spec: str, n_frames: int) -> range:
    try:
        start_s, _, stop_s = spec.partition(":")
        start = int(start_s) if start_s else 0
        stop = int(stop_s) if stop_s else n_frames
    except ValueError as exc:
        raise DataError(f"bad --frames range {spec!r} (want start:stop)") from exc
    if not (0 <= start < stop <= n_frames):
        raise DataError(
            f"--frames {spec!r} out of bounds for a {n_frames}-frame stream"
        )
    return range(start, stop)


def cmd_export(args) -> int:
    stream = read_stream(args.stream)
    frames = _parse_frame_range(args.frames, stream.n_frames)
    clouds = [materialize_frame(stream, k) for k in frames]
    out = export_viewer_bundle(
        args.out,
        clouds,
        stream.header.get("cameras", []),
        stream.header.get("background", [0.0, 0.0, 0.0]),
    )
    print(f"wrote viewer bundle ({len(clouds)} frames): {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_stream_log(args.log)
    eval_rows = read_eval_log(args.eval) if args.eval else None
    written = render_report(args.out, rows, eval_rows)
    for path in written:
        print(f"wrote figure: {path}")
    return EXIT_OK


def cmd_config(args) -> int:
    config = _effective_config(args)
    text = json.dumps(config, indent=2, sort_keys=True)
    if args.out:
        _ensure_parent(Path(args.out)).write_text(text + "\n")
        print(f"wrote config: {args.out}")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatstream", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a scripted synthetic dataset")
    p.add_argument("--out", type=Path, required=True, help="dataset directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stream", help="train a sequence and write the stream")
    p.add_argument("--dataset", type=Path, required=True,
                   help="dataset directory or manifest path")
    p.add_argument("--out", type=Path, required=True, help="output stream file")
    p.add_argument("--log", type=Path, help="CSV log path (default: <out>.csv)")
    p.add_argument("--report", type=Path, help="also render figures to this directory")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap")
    _add_config_flags(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", help="held-out PSNR via playback rendering")
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--out", type=Path, help="CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a viewer bundle from a stream")
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="bundle directory")
    p.add_argument("--frames", default=":",
                   help="frame range start:stop (stop exclusive; default all)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="render figures from CSV logs")
    p.add_argument("--log", type=Path, required=True, help="stream CSV log")
    p.add_argument("--eval", type=Path, help="optional eval CSV log")
    p.add_argument("--out", type=Path, required=True, help="figure directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("--out", type=Path, help="write JSON here instead of stdout")
    _add_config_flags(p)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (DataError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Three subcommands: ``segment`` trains on one image and writes label,
visualization, log and metric artifacts; ``bench`` runs a manifest of
images through the same pipeline in a bounded worker pool and emits a
deterministic aggregate report; ``metrics`` scores pre-computed label
maps.  Exit codes: 0 success, 1 configuration error, 2 unreadable
input, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import imgio
from .errors import ConfigurationError, DivergenceError, InputError
from .metrics import MetricReport, evaluate
from .postprocess import refine
from .train import TrainConfig, train_one, train_ois, write_training_log

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_DIVERGED = 3

METRIC_COLUMNS = ("PRI", "VoI", "GCE", "BDE", "SC", "mIoU")

# flag spelling -> (TrainConfig field, parser)
_CONFIG_KEYS = {
    "iters": ("iterations", int),
    "lr": ("learning_rate", float),
    "momentum": ("momentum", float),
    "gamma1": ("gamma1", float),
    "gamma2": ("gamma2", float),
    "alpha1": ("alpha1", float),
    "alpha2": ("alpha2", float),
    "eta": ("eta", float),
    "superpixels": ("superpixels", int),
    "q": ("clusters", int),
    "pp-threshold": ("merge_threshold", float),
    "seed": ("seed", int),
}


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage problems share exit code 1."""

    def error(self, message):
        raise ConfigurationError(message)


def _train_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="flat key=value settings file; flags win")
    for key in _CONFIG_KEYS:
        field, cast = _CONFIG_KEYS[key]
        p.add_argument(f"--{key}", type=cast, default=None, dest=key.replace("-", "_"))
    p.add_argument("--ois", action="store_true", help="sweep superpixel counts, keep the best")
    p.add_argument("--select", default="pri", choices=("pri", "sc", "miou"),
                   help="scale-selection metric for --ois")
    p.add_argument("--no-eca", action="store_true", help="disable channel attention")
    p.add_argument("--no-global-loss", action="store_true", help="disable the affinity loss")
    p.add_argument("--no-rec-loss", action="store_true", help="disable the reconstruction loss")
    p.add_argument("--no-postproc", action="store_true", help="skip region merging")
    return p


def read_config_file(path: str | Path) -> dict[str, object]:
    """Parse a flat key=value settings file into TrainConfig fields."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read settings file {path}: {exc}") from exc
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if key not in _CONFIG_KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown setting {key!r}")
        field, cast = _CONFIG_KEYS[key]
        try:
            values[field] = cast(value.strip())
        except ValueError as exc:
            raise ConfigurationError(
                f"{path}:{lineno}: bad value for {key}: {value.strip()!r}"
            ) from exc
    return values


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    """Merge defaults, settings file, and flags (flags win) and validate."""
    values: dict[str, object] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key, (field, _) in _CONFIG_KEYS.items():
        flag = getattr(args, key.replace("-", "_"))
        if flag is not None:
            values[field] = flag
    return TrainConfig(
        use_eca=not args.no_eca,
        use_global_loss=not args.no_global_loss,
        use_rec_loss=not args.no_rec_loss,
        **values,
    )


def _load_gts(paths, shape) -> list[np.ndarray]:
    gts = []
    for p in paths:
        gt = imgio.load_labels(p)
        if gt.shape != shape:
            raise InputError(f"ground truth {p} is {gt.shape}, image is {shape}")
        gts.append(gt)
    return gts


def _metric_row(image: str, k: int, stage: str, report: MetricReport) -> dict:
    row = {"image": image, "K": k, "stage": stage}
    row.update(report.as_dict())
    return row


def _write_metric_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image", "K", "stage", *METRIC_COLUMNS])
        for row in rows:
            writer.writerow(
                [row["image"], row["K"], row["stage"]]
                + [f"{row[m]:.6f}" for m in METRIC_COLUMNS]
            )


def _print_metrics(stage: str, report: MetricReport, file=None) -> None:
    parts = " ".join(f"{k}={v:.4f}" for k, v in report.as_dict().items())
    print(f"{stage}: {parts}", file=file or sys.stdout)


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = build_train_config(args)
    cfg.validate()
    if args.ois and not args.gt:
        raise ConfigurationError("--ois needs at least one --gt to select a scale")
    image = imgio.load_image(args.image)
    gts = _load_gts(args.gt or [], image.shape[:2])

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem

    if args.ois:
        sweep = train_ois(image, gts, cfg, select=args.select)
        trace = sweep.best.trace
        k_used = sweep.best.superpixels
        raw = trace.labels
        merged = raw if args.no_postproc else sweep.best.merged
    else:
        trace = train_one(image, cfg)
        k_used = cfg.superpixels
        raw = trace.labels
        if trace.failed:
            # Partial artifacts: whatever the aborted run produced.
            write_training_log(trace.history, out_dir / f"{stem}_training_log.csv")
            imgio.save_labels_csv(raw, out_dir / f"{stem}_labels.csv")
            imgio.save_colorized_png(raw, out_dir / f"{stem}_labels.png", seed=cfg.seed)
            print(f"error: training diverged: {trace.message}", file=sys.stderr)
            return EXIT_DIVERGED
        merged = raw if args.no_postproc else refine(image, raw, cfg.merge_threshold)

    write_training_log(trace.history, out_dir / f"{stem}_training_log.csv")
    imgio.save_labels_csv(merged, out_dir / f"{stem}_labels.csv")
    imgio.save_colorized_png(merged, out_dir / f"{stem}_labels.png", seed=cfg.seed)
    if args.dump_superpixels:
        imgio.save_labels_csv(trace.superpixels.labels, out_dir / f"{stem}_superpixels.csv")
        imgio.save_labels_png(trace.superpixels.labels, out_dir / f"{stem}_superpixels.png")

    if gts:
        rows = [_metric_row(str(args.image), k_used, "raw", evaluate(raw, gts))]
        if not args.no_postproc:
            rows.append(
                _metric_row(str(args.image), k_used, "postprocessed", evaluate(merged, gts))
            )
        _write_metric_csv(rows, out_dir / f"{stem}_metrics.csv")
        for row in rows:
            parts = " ".join(f"{m}={row[m]:.4f}" for m in METRIC_COLUMNS)
            print(f"{row['stage']}: {parts}")
    return EXIT_OK


def load_manifest(path: str | Path) -> list[tuple[Path, list[Path]]]:
    """Read and fully validate a benchmark manifest before any training.

    JSON layout: ``{"format": "png", "items": [{"image": ...,
    "ground_truths": [...]}, ...]}``.  Relative paths resolve against
    the manifest's directory.  Every file must exist and decode, and
    every ground truth must match its image's dimensions.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {path} is not valid JSON: {exc}") from exc
    items = doc.get("items") if isinstance(doc, dict) else None
    if not isinstance(items, list) or not items:
        raise InputError(f"manifest {path} needs a non-empty 'items' list")
    base = path.parent
    out: list[tuple[Path, list[Path]]] = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "image" not in item:
            raise InputError(f"manifest item {i} needs an 'image' path")
        image_path = base / item["image"]
        gt_paths = [base / g for g in item.get("ground_truths", [])]
        image = imgio.load_image(image_path)
        for gp in gt_paths:
            gt = imgio.load_labels(gp)
            if gt.shape != image.shape[:2]:
                raise InputError(
                    f"manifest item {i}: {gp} is {gt.shape}, image is {image.shape[:2]}"
                )
        out.append((image_path, gt_paths))
    return sorted(out, key=lambda pair: str(pair[0]))


def _bench_worker(job):
    """Run one image end to end; returns (path, row dicts, error message)."""
    image_path, gt_paths, cfg, use_ois, select, no_postproc = job
    name = str(image_path)
    try:
        image = imgio.load_image(image_path)
        gts = [imgio.load_labels(p) for p in gt_paths]
        if use_ois and gts:
            sweep = train_ois(image, gts, cfg, select=select)
            trace, k_used = sweep.best.trace, sweep.best.superpixels
            raw = trace.labels
            merged = raw if no_postproc else sweep.best.merged
        else:
            trace = train_one(image, cfg)
            if trace.failed:
                return name, [], f"training diverged: {trace.message}"
            raw, k_used = trace.labels, cfg.superpixels
            merged = raw if no_postproc else refine(image, raw, cfg.merge_threshold)
        if not gts:
            return name, [], "no ground truth; nothing to score"
        rows = [_metric_row(name, k_used, "raw", evaluate(raw, gts))]
        if not no_postproc:
            rows.append(_metric_row(name, k_used, "postprocessed", evaluate(merged, gts)))
        return name, rows, ""
    except (ConfigurationError, InputError, DivergenceError) as exc:
        return name, [], str(exc)


def _aggregate(rows, stage: str) -> dict | None:
    stage_rows = [r for r in rows if r["stage"] == stage]
    if not stage_rows:
        return None
    agg = {"image": "mean", "K": len(stage_rows), "stage": stage}
    for m in METRIC_COLUMNS:
        agg[m] = float(np.mean([r[m] for r in stage_rows]))
    return agg


def _format_table(aggregates, n_images: int, n_failed: int) -> str:
    lines = []
    header = f"{'stage':<14}" + "".join(f"{m:>9}" for m in METRIC_COLUMNS)
    lines.append(header)
    lines.append("-" * len(header))
    for agg in aggregates:
        lines.append(
            f"{agg['stage']:<14}"
            + "".join(f"{agg[m]:>9.4f}" for m in METRIC_COLUMNS)
        )
    lines.append(f"images scored: {n_images}  failed: {n_failed}")
    return "\n".join(lines) + "\n"


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = build_train_config(args)
    cfg.validate()
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [
        (image, gts, cfg, args.ois, args.select, args.no_postproc)
        for image, gts in entries
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_bench_worker, jobs))
    else:
        results = [_bench_worker(job) for job in jobs]

    rows: list[dict] = []
    failures: list[tuple[str, str]] = []
    for name, image_rows, error in results:
        if error:
            failures.append((name, error))
        rows.extend(image_rows)
    for name, error in failures:
        print(f"skipped {name}: {error}", file=sys.stderr)

    aggregates = [a for s in ("raw", "postprocessed") if (a := _aggregate(rows, s))]
    _write_metric_csv(rows + aggregates, out_dir / "bench_metrics.csv")
    table = _format_table(aggregates, len(entries) - len(failures), len(failures))
    (out_dir / "bench_report.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    pred = imgio.load_labels(args.pred)
    gts = _load_gts(args.gt, pred.shape)
    report = evaluate(pred, gts)
    _print_metrics("provided", report)
    if args.out:
        _write_metric_csv(
            [_metric_row(str(args.pred), 0, "provided", report)], args.out
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pixelclust",
        description="Single-image unsupervised segmentation by pixel clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    flags = _train_flags()

    seg = sub.add_parser("segment", parents=[flags], help="segment one image")
    seg.add_argument("image", help="input image (PNG or anything Pillow reads)")
    seg.add_argument("--gt", action="append", help="ground-truth label map; repeatable")
    seg.add_argument("--out-dir", default=".", help="artifact directory")
    seg.add_argument("--dump-superpixels", action="store_true",
                     help="also write the superpixel map as CSV and 16-bit PNG")
    seg.set_defaults(func=cmd_segment)

    bench = sub.add_parser("bench", parents=[flags], help="run a dataset manifest")
    bench.add_argument("manifest", help="JSON manifest of images and ground truths")
    bench.add_argument("--out-dir", default=".", help="artifact directory")
    bench.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1),
                       help="bounded worker pool size")
    bench.set_defaults(func=cmd_bench)

    met = sub.add_parser("metrics", help="score saved label maps")
    met.add_argument("pred", help="predicted label map (CSV or 16-bit PNG)")
    met.add_argument("--gt", action="append", required=True,
                     help="ground-truth label map; repeatable")
    met.add_argument("--out", help="also write a metric CSV here")
    met.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

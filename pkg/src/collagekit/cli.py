"""Command-line orchestration: augment, stage, corrupt, eval, stats, preview.

Flags mirror config-file keys in kebab-case and override them; every bit of
randomness flows from one --seed. Each run persists a manifest.json that is
sufficient to re-derive the exact command.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from .collage import (
    PROFILES,
    bbox_paste_augment,
    generate_collage_dataset,
    mosaic_augment,
    write_paste_logs,
)
from .config import (
    ConfigError,
    build_collage_config,
    build_pixmix_config,
    file_epochs,
    file_mixer_dir,
    file_seed,
    parse_kv_file,
)
from .corruption import CORRUPTION_KINDS, SEVERITIES, corrupt_dataset
from .dataset import Dataset, density_stats, load_dataset, save_dataset
from .manifest import RunManifest, StageTimer
from .metrics import load_detections, map_coco, mapc
from .mix import colmix_a_pipeline, colmix_b_stage, generate_pixmix_dataset, load_mixers
from .parallel import default_workers, deterministic_map, sample_rng
from .plots import save_corruption_map_plot, save_density_histogram, save_preview_images

AUGMENT_MODES = ("collage", "mosaic", "bbox-paste", "pixmix", "colmix-a")


def _first(*values):
    for v in values:
        if v is not None:
            return v
    return None


def _load_input(ann_path: str, image_root: str | None) -> Dataset:
    ann = Path(ann_path)
    root = Path(image_root) if image_root else ann.parent / "images"
    return load_dataset(ann, root)


def _mosaic_task(shared, item):
    dataset, seed, grid, threshold, n = shared
    epoch, index = item
    rng = sample_rng(seed, epoch, index)
    g = grid if grid else (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    rec = mosaic_augment(dataset, g, rng, bbox_threshold=threshold,
                         out_id=epoch * n + index + 1)
    rec.file_name = f"mosaic_e{epoch:03d}_i{index:05d}.png"
    return rec


def _bbox_paste_task(shared, item):
    dataset, seed, count, n = shared
    epoch, index = item
    rng = sample_rng(seed, epoch, index)
    rec, skipped = bbox_paste_augment(dataset.images[index], dataset, count,
                                      rng, out_id=epoch * n + index + 1)
    rec.file_name = f"bboxpaste_e{epoch:03d}_i{index:05d}.png"
    return rec, skipped


def _collage_flag_argv(cfg) -> list[str]:
    lo, hi = cfg.target_density
    return ["--target-density", str(lo), str(hi),
            "--min-size", str(cfg.min_size),
            "--max-dilation", str(cfg.max_dilation),
            "--max-expansions", str(cfg.max_expansions),
            "--min-step", str(cfg.min_step),
            "--max-step", str(cfg.max_step),
            "--occlusion-tol", str(cfg.occlusion_tol),
            "--bbox-threshold", str(cfg.bbox_threshold),
            "--base-mode", cfg.base_mode]


def _mix_flag_argv(cfg) -> list[str]:
    return ["--max-rounds", str(cfg.max_rounds),
            "--blend-strength", str(cfg.blend_strength)]


def cmd_augment(args) -> int:
    timer = StageTimer()
    dataset = _load_input(args.input, args.image_root)
    timer.mark("load")
    kv = parse_kv_file(args.config) if args.config else {}
    seed = int(_first(args.seed, file_seed(kv), 0))
    epochs = int(_first(args.epochs, file_epochs(kv), 1))
    workers = args.workers if args.workers else default_workers()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    collage_cfg = build_collage_config(
        kv, args.profile, seed=seed,
        target_density=tuple(args.target_density) if args.target_density else None,
        min_size=args.min_size, max_dilation=args.max_dilation,
        max_expansions=args.max_expansions, min_step=args.min_step,
        max_step=args.max_step, occlusion_tol=args.occlusion_tol,
        bbox_threshold=args.bbox_threshold, base_mode=args.base_mode,
        canvas_fill=args.canvas_fill)
    mix_cfg = build_pixmix_config(kv, seed=seed, max_rounds=args.max_rounds,
                                  blend_strength=args.blend_strength)
    mixer_dir = _first(args.mixer_dir, file_mixer_dir(kv))

    counters: dict = {"images_in": len(dataset.images),
                      "annotations_dropped_on_load": dataset.dropped_annotations}
    logs: list = []
    n = len(dataset.images)
    items = [(e, i) for e in range(epochs) for i in range(n)]
    config_dump: dict = {"mode": args.mode, "epochs": epochs}
    argv = ["--mode", args.mode, "--in", str(args.input), "--out", str(args.out),
            "--epochs", str(epochs), "--workers", str(workers), "--seed", str(seed)]
    if args.image_root:
        argv += ["--image-root", str(args.image_root)]

    if args.mode == "collage":
        out_ds = generate_collage_dataset(dataset, collage_cfg, epochs,
                                          workers=workers, logs=logs)
        config_dump["collage"] = dataclasses.asdict(collage_cfg)
        argv += _collage_flag_argv(collage_cfg)
    elif args.mode == "colmix-a":
        if not mixer_dir:
            raise ConfigError("mode colmix-a needs --mixer-dir (or MixerDir in config)")
        mixers = load_mixers(mixer_dir)
        out_ds = colmix_a_pipeline(dataset, collage_cfg, mix_cfg, mixers,
                                   epochs, workers=workers, logs=logs)
        config_dump["collage"] = dataclasses.asdict(collage_cfg)
        config_dump["pixmix"] = dataclasses.asdict(mix_cfg)
        config_dump["mixer_dir"] = str(mixer_dir)
        counters["mixers"] = len(mixers)
        argv += _collage_flag_argv(collage_cfg) + _mix_flag_argv(mix_cfg)
        argv += ["--mixer-dir", str(mixer_dir)]
    elif args.mode == "pixmix":
        if not mixer_dir:
            raise ConfigError("mode pixmix needs --mixer-dir (or MixerDir in config)")
        mixers = load_mixers(mixer_dir)
        out_ds = generate_pixmix_dataset(dataset, mixers, mix_cfg, epochs,
                                         workers=workers)
        config_dump["pixmix"] = dataclasses.asdict(mix_cfg)
        config_dump["mixer_dir"] = str(mixer_dir)
        counters["mixers"] = len(mixers)
        argv += _mix_flag_argv(mix_cfg) + ["--mixer-dir", str(mixer_dir)]
    elif args.mode == "mosaic":
        grid = tuple(args.grid) if args.grid else None
        results = deterministic_map(
            _mosaic_task, items, workers,
            shared=(dataset, seed, grid, collage_cfg.bbox_threshold, n))
        out_ds = Dataset(images=results, categories=dict(dataset.categories))
        config_dump["grid"] = list(grid) if grid else "random"
        config_dump["bbox_threshold"] = collage_cfg.bbox_threshold
        if grid:
            argv += ["--grid", str(grid[0]), str(grid[1])]
        argv += ["--bbox-threshold", str(collage_cfg.bbox_threshold)]
    elif args.mode == "bbox-paste":
        results = deterministic_map(_bbox_paste_task, items, workers,
                                    shared=(dataset, seed, args.paste_count, n))
        out_ds = Dataset(images=[r for r, _ in results],
                         categories=dict(dataset.categories))
        counters["skipped_pastes"] = int(sum(s for _, s in results))
        config_dump["paste_count"] = args.paste_count
        argv += ["--paste-count", str(args.paste_count)]
    else:
        raise ConfigError(f"unknown mode {args.mode!r}")
    timer.mark("generate")

    save_dataset(out_ds, out)
    counters["images_out"] = len(out_ds.images)
    if logs:
        write_paste_logs(logs, out / "paste_log.jsonl")
        counters["pastes"] = sum(len(l.entries) for l in logs)
        counters["fallback_pastes"] = sum(
            1 for l in logs for e in l.entries if e.fallback)
        counters["exhausted_samples"] = sum(1 for l in logs if l.exhausted)
    timer.mark("write")

    RunManifest(command="augment", argv=argv, seed=seed, config=config_dump,
                inputs={"annotations": str(args.input),
                        "image_root": str(args.image_root or Path(args.input).parent / "images")},
                outputs={"dataset": str(out),
                         "paste_log": str(out / "paste_log.jsonl") if logs else None},
                counters=counters, timing=timer.done()).write(out / "manifest.json")
    print(f"augment[{args.mode}]: wrote {counters['images_out']} images to {out}")
    return 0


def cmd_stage(args) -> int:
    timer = StageTimer()
    dataset = _load_input(args.input, args.image_root)
    timer.mark("load")
    kv = parse_kv_file(args.config) if args.config else {}
    seed = int(_first(args.seed, file_seed(kv), 0))
    epochs = int(_first(args.epochs, file_epochs(kv), 1))
    workers = args.workers if args.workers else default_workers()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    collage_cfg = build_collage_config(
        kv, args.profile, seed=seed,
        target_density=tuple(args.target_density) if args.target_density else None,
        min_size=args.min_size, max_dilation=args.max_dilation,
        max_expansions=args.max_expansions, min_step=args.min_step,
        max_step=args.max_step, occlusion_tol=args.occlusion_tol,
        bbox_threshold=args.bbox_threshold, base_mode=args.base_mode)
    mix_cfg = build_pixmix_config(kv, seed=seed, max_rounds=args.max_rounds,
                                  blend_strength=args.blend_strength)
    mixer_dir = _first(args.mixer_dir, file_mixer_dir(kv))
    if not mixer_dir:
        raise ConfigError("stage needs --mixer-dir (or MixerDir in config)")
    mixers = load_mixers(mixer_dir)

    logs: list = []
    stage1, stage2 = colmix_b_stage(dataset, collage_cfg, mix_cfg, mixers,
                                    epochs, workers=workers, out_dir=out,
                                    logs=logs)
    write_paste_logs(logs, out / "stage1" / "paste_log.jsonl")
    timer.mark("generate")

    argv = ["--in", str(args.input), "--out", str(args.out),
            "--epochs", str(epochs), "--workers", str(workers),
            "--seed", str(seed), "--mixer-dir", str(mixer_dir)]
    argv += _collage_flag_argv(collage_cfg) + _mix_flag_argv(mix_cfg)
    RunManifest(
        command="stage", argv=argv, seed=seed,
        config={"collage": dataclasses.asdict(collage_cfg),
                "pixmix": dataclasses.asdict(mix_cfg),
                "stage_seeds": {"stage1_collage": collage_cfg.seed,
                                "stage2_pixmix": mix_cfg.seed},
                "epochs": epochs, "mixer_dir": str(mixer_dir)},
        inputs={"annotations": str(args.input)},
        outputs={"stage1": str(out / "stage1"), "stage2": str(out / "stage2")},
        counters={"stage1_images": len(stage1.images),
                  "stage2_images": len(stage2.images),
                  "pastes": sum(len(l.entries) for l in logs)},
        timing=timer.done()).write(out / "manifest.json")
    print(f"stage: wrote {len(stage1.images)} + {len(stage2.images)} images to {out}")
    return 0


def cmd_corrupt(args) -> int:
    timer = StageTimer()
    dataset = _load_input(args.input, args.image_root)
    timer.mark("load")
    seed = int(args.seed if args.seed is not None else 0)
    workers = args.workers if args.workers else default_workers()
    kinds = args.kinds.split(",") if args.kinds else list(CORRUPTION_KINDS)
    severities = ([int(s) for s in args.severities.split(",")]
                  if args.severities else list(SEVERITIES))
    out = Path(args.out)
    summary = corrupt_dataset(dataset, kinds, severities, out, seed=seed,
                              workers=workers)
    timer.mark("generate")

    argv = ["--in", str(args.input), "--out", str(args.out),
            "--kinds", ",".join(kinds),
            "--severities", ",".join(str(s) for s in severities),
            "--workers", str(workers), "--seed", str(seed)]
    RunManifest(command="corrupt", argv=argv, seed=seed,
                config={"kinds": kinds, "severities": severities},
                inputs={"annotations": str(args.input)},
                outputs={"grid": str(out)},
                counters=summary, timing=timer.done()).write(out / "manifest.json")
    print(f"corrupt: wrote {summary['cells']} datasets "
          f"({summary['files_written']} images) to {out}")
    return 0


def cmd_eval(args) -> int:
    timer = StageTimer()
    gt_path = Path(args.gt)
    gts = load_dataset(gt_path, args.image_root or gt_path.parent / "images")
    dets = load_detections(args.detections)
    report = map_coco(dets, gts)
    timer.mark("clean")

    if args.grid_root:
        grid_root = Path(args.grid_root)
        grid: dict = {}
        for kind in CORRUPTION_KINDS:
            for sev in SEVERITIES:
                cell = grid_root / kind / str(sev)
                ann = cell / "annotations.json"
                det_file = cell / "detections.json"
                if not ann.is_file() or not det_file.is_file():
                    print(f"error: corruption grid cell ({kind}, severity {sev}) "
                          f"is missing under {grid_root}", file=sys.stderr)
                    return 1
                cell_gts = load_dataset(ann, cell / "images")
                cell_map = map_coco(load_detections(det_file), cell_gts).map
                grid[(kind, sev)] = 0.0 if cell_map is None else cell_map
        report.grid = grid
        report.mapc = mapc(grid)
        timer.mark("grid")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    if report.grid is not None:
        with open(out / "corruption_grid.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "severity", "map"])
            for kind, sev, value in report.grid_rows():
                writer.writerow([kind, sev, f"{value:.6f}"])
        save_corruption_map_plot(report.grid, report.map,
                                 out / "corruption_map.png")
    sys.stdout.write(report.to_text())

    argv = ["--gt", str(args.gt), "--detections", str(args.detections),
            "--out", str(args.out)]
    if args.grid_root:
        argv += ["--grid-root", str(args.grid_root)]
    RunManifest(command="eval", argv=argv, seed=0,
                config={"iou_thresholds": "0.50:0.05:0.95"},
                inputs={"gt": str(args.gt), "detections": str(args.detections),
                        "grid_root": str(args.grid_root) if args.grid_root else None},
                outputs={"report": str(out / "report.txt")},
                counters={"detections": len(dets),
                          "classes_evaluated": len(report.per_class_ap),
                          "map": report.map,
                          "mapc": report.mapc},
                timing=timer.done()).write(out / "manifest.json")
    return 0


def cmd_stats(args) -> int:
    timer = StageTimer()
    dataset = _load_input(args.input, args.image_root)
    stats = density_stats(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    mean = "n/a" if stats.mean is None else f"{stats.mean:.6f}"
    median = "n/a" if stats.median is None else f"{stats.median:.6f}"
    text = (f"images: {stats.count}\n"
            f"annotations: {dataset.total_annotations}\n"
            f"mean density: {mean}\n"
            f"median density: {median}\n")
    (out / "stats.txt").write_text(text, encoding="utf-8")
    with open(out / "densities.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "density"])
        for image_id, density in stats.densities:
            writer.writerow([image_id, f"{density:.8f}"])
    save_density_histogram(stats, out / "density_hist.png")
    sys.stdout.write(text)

    RunManifest(command="stats",
                argv=["--in", str(args.input), "--out", str(args.out)],
                seed=0, config={}, inputs={"annotations": str(args.input)},
                outputs={"stats": str(out / "stats.txt")},
                counters={"images": stats.count},
                timing=timer.done()).write(out / "manifest.json")
    return 0


def cmd_preview(args) -> int:
    timer = StageTimer()
    dataset = _load_input(args.input, args.image_root)
    out = Path(args.out)
    written = save_preview_images(dataset, out, args.count)
    print(f"preview: wrote {len(written)} images to {out}")
    RunManifest(command="preview",
                argv=["--in", str(args.input), "--out", str(args.out),
                      "--count", str(args.count)],
                seed=0, config={"count": args.count},
                inputs={"annotations": str(args.input)},
                outputs={"previews": str(out)},
                counters={"images": len(written)},
                timing=timer.done()).write(out / "manifest.json")
    return 0


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--in", dest="input", required=True,
                   help="annotation file (COCO-style JSON)")
    p.add_argument("--image-root", default=None,
                   help="image directory (default: <in>/../images)")
    p.add_argument("--out", required=True, help="output directory")


def _add_collage_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key-value config file")
    p.add_argument("--profile", choices=sorted(PROFILES), default=None)
    p.add_argument("--target-density", nargs=2, type=float, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--min-size", type=int, default=None)
    p.add_argument("--max-dilation", type=int, default=None)
    p.add_argument("--max-expansions", type=int, default=None)
    p.add_argument("--min-step", type=int, default=None)
    p.add_argument("--max-step", type=int, default=None)
    p.add_argument("--occlusion-tol", type=int, default=None)
    p.add_argument("--bbox-threshold", type=float, default=None)
    p.add_argument("--base-mode", choices=("existing-image", "blank-canvas"),
                   default=None)
    p.add_argument("--canvas-fill", type=int, default=None)
    p.add_argument("--max-rounds", type=int, default=None)
    p.add_argument("--blend-strength", type=float, default=None)
    p.add_argument("--mixer-dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collagekit",
        description="Offline dataset augmentation, corruption benchmarking "
                    "and detection evaluation for aerial imagery")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="generate an augmented dataset")
    p.add_argument("--mode", choices=AUGMENT_MODES, required=True)
    _add_dataset_args(p)
    _add_collage_args(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="default from $COLLAGEKIT_WORKERS")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid", nargs=2, type=int, default=None, metavar=("I", "J"),
                   help="mosaic tile grid (default: random per sample)")
    p.add_argument("--paste-count", type=int, default=10,
                   help="chips per sample in bbox-paste mode")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("stage", help="emit the two-stage pre-train/fine-tune datasets")
    _add_dataset_args(p)
    _add_collage_args(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_stage)

    p = sub.add_parser("corrupt", help="generate the corruption grid")
    _add_dataset_args(p)
    p.add_argument("--kinds", default=None,
                   help="comma list (default: all 15 kinds)")
    p.add_argument("--severities", default=None,
                   help="comma list of 1..5 (default: all)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_corrupt)

    p = sub.add_parser("eval", help="evaluate detections (mAP, optional mAPc)")
    p.add_argument("--gt", required=True, help="ground-truth annotation file")
    p.add_argument("--image-root", default=None)
    p.add_argument("--detections", required=True,
                   help="detections in COCO results format")
    p.add_argument("--grid-root", default=None,
                   help="corruption grid with per-cell detections.json")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("stats", help="object-density diagnostics")
    _add_dataset_args(p)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("preview", help="render annotated samples")
    _add_dataset_args(p)
    p.add_argument("--count", type=int, default=4)
    p.set_defaults(handler=cmd_preview)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:  # argparse handles its own exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

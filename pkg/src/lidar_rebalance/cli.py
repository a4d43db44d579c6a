"""Command-line entry point: stats, build-db, augment, dwa-sim.

Exit codes are a stable contract: 0 success, 1 validation failure,
2 I/O or format failure. Every augmentation run writes audit telemetry;
silent augmentation is prohibited because rejection-reason counts are how
users validate the semantic association behavior.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from . import balance, gtdb, ingest, sampler
from .config import DatasetPaths, ProjectConfig, load_project_config
from .core import PointCloud
from .errors import DataIOError, FormatError, LidarRebalanceError, ValidationError

log = logging.getLogger("lidar_rebalance")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _setup_logging():
    level = os.environ.get("LIDAR_REBALANCE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _frame_ids(paths: DatasetPaths) -> List[str]:
    if not paths.velodyne_dir.is_dir():
        raise DataIOError(f"velodyne directory {paths.velodyne_dir} is not readable")
    return sorted(p.stem for p in paths.velodyne_dir.glob("*.bin"))


def _load_semantic(paths: DatasetPaths, frame_id: str):
    if paths.semantic_kind == "none":
        return None
    suffix = ".sem" if paths.semantic_kind == "image" else ".spt"
    blob_path = paths.semantic_dir / f"{frame_id}{suffix}"
    if not blob_path.exists():
        return None
    legend_path = paths.semantic_dir / "legend.txt"
    if not legend_path.exists():
        raise DataIOError(f"semantic legend {legend_path} is missing")
    data = blob_path.read_bytes()
    legend = legend_path.read_text()
    if paths.semantic_kind == "image":
        return ingest.read_semantic_map(data, legend)
    return ingest.read_semantic_points(data, legend)


def _load_frame(
    config: ProjectConfig, frame_id: str, need_cloud: bool = True, need_semantic: bool = True
) -> ingest.FrameBundle:
    paths = config.dataset
    try:
        calib = ingest.read_calibration(
            (paths.calib_dir / f"{frame_id}.txt").read_text(),
            image_width=paths.image_width,
            image_height=paths.image_height,
        )
        label_text = (paths.label_dir / f"{frame_id}.txt").read_text()
        if need_cloud:
            cloud = ingest.read_point_cloud(
                (paths.velodyne_dir / f"{frame_id}.bin").read_bytes(), frame_id
            )
        else:
            cloud = PointCloud.empty(frame_id)
    except OSError as exc:
        raise DataIOError(f"cannot read frame {frame_id}: {exc}") from exc
    boxes = ingest.read_labels(label_text, calib, config.catalog, strict=paths.strict_labels)
    semantic = _load_semantic(paths, frame_id) if need_semantic else None
    return ingest.FrameBundle(cloud=cloud, boxes=tuple(boxes), calib=calib, semantic=semantic)


def _require_dataset(config: ProjectConfig) -> DatasetPaths:
    if config.dataset is None:
        raise ValidationError("this command needs a [dataset] section in the config")
    return config.dataset


def cmd_stats(config: ProjectConfig, out_dir: Path) -> int:
    paths = _require_dataset(config)
    ids = _frame_ids(paths)
    frames = (_load_frame(config, fid, need_cloud=False, need_semantic=False) for fid in ids)
    stats = ingest.dataset_stats(frames, config.catalog)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "stats.csv"
    csv_path.write_text(stats.to_csv(config.catalog))
    print(stats.to_table(config.catalog))
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_build_db(config: ProjectConfig, out_dir: Path) -> int:
    paths = _require_dataset(config)
    ids = _frame_ids(paths)
    frames = (_load_frame(config, fid, need_semantic=False) for fid in ids)
    db = gtdb.build_database(frames, config.catalog)
    db_dir = config.database_dir
    try:
        gtdb.save(db, db_dir)
    except LidarRebalanceError:
        shutil.rmtree(db_dir, ignore_errors=True)  # no partial directories
        raise
    for cid in config.catalog.class_ids:
        name = config.catalog.name_of(cid)
        print(
            f"{name}: {db.counts.get(cid, 0)} records "
            f"({db.skipped.get(cid, 0)} skipped below min_points)"
        )
    print(f"wrote {db_dir} from {db.source_frames} frames")
    return EXIT_OK


def _augment_one(config: ProjectConfig, db, frame_id: str, out_root: Path):
    frame = _load_frame(config, frame_id)
    if config.sampler.semantic_enabled and frame.semantic is None:
        return frame_id, None  # counted as skipped
    rng = sampler.frame_rng(config.seed, frame_id)
    result = sampler.augment_frame(frame, db, config.catalog, config.sampler, rng)

    (out_root / "velodyne").mkdir(parents=True, exist_ok=True)
    (out_root / "label_2").mkdir(parents=True, exist_ok=True)
    (out_root / "calib").mkdir(parents=True, exist_ok=True)
    (out_root / "audit").mkdir(parents=True, exist_ok=True)

    (out_root / "velodyne" / f"{frame_id}.bin").write_bytes(
        ingest.write_point_cloud(result.cloud)
    )
    # original label lines are preserved verbatim; inserted boxes are appended
    paths = config.dataset
    label_text = (paths.label_dir / f"{frame_id}.txt").read_text()
    inserted_boxes = result.boxes[len(frame.boxes):]
    if inserted_boxes:
        if label_text and not label_text.endswith("\n"):
            label_text += "\n"
        label_text += "".join(
            ingest.format_label_line(box, frame.calib, config.catalog) + "\n"
            for box in inserted_boxes
        )
    (out_root / "label_2" / f"{frame_id}.txt").write_text(label_text)
    shutil.copyfile(paths.calib_dir / f"{frame_id}.txt", out_root / "calib" / f"{frame_id}.txt")

    audit = sampler.audit_payload(result, config.catalog)
    (out_root / "audit" / f"{frame_id}.json").write_text(
        json.dumps(audit, sort_keys=True, indent=2) + "\n"
    )
    return frame_id, audit


def cmd_augment(config: ProjectConfig, out_dir: Path) -> int:
    _require_dataset(config)
    try:
        db = gtdb.load(config.database_dir)
    except (DataIOError, FormatError):
        log.error("no usable database at %s; run build-db first", config.database_dir)
        raise
    ids = _frame_ids(config.dataset)
    out_root = out_dir / "augmented"

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda fid: _augment_one(config, db, fid, out_root), ids))
    else:
        results = [_augment_one(config, db, fid, out_root) for fid in ids]

    skipped = [fid for fid, audit in results if audit is None]
    totals: dict = {}
    removed = 0
    accepted = 0
    for _, audit in results:
        if audit is None:
            continue
        removed += audit["removed_points"]
        for cls, a in audit["per_class"].items():
            agg = totals.setdefault(
                cls, {"drawn": 0, "proposals": 0, "accepted": 0, "rejections": {}}
            )
            for key in ("drawn", "proposals", "accepted"):
                agg[key] += a[key]
            for reason, n in a["rejections"].items():
                agg["rejections"][reason] = agg["rejections"].get(reason, 0) + n
            accepted += a["accepted"]
    aggregate = {
        "mode": config.sampler.mode,
        "seed": config.seed,
        "frames": len(ids),
        "skipped_no_semantics": sorted(skipped),
        "removed_points": removed,
        "per_class": {k: totals[k] for k in sorted(totals)},
    }
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "audit.json").write_text(json.dumps(aggregate, sort_keys=True, indent=2) + "\n")
    print(
        f"augmented {len(ids) - len(skipped)}/{len(ids)} frames "
        f"({len(skipped)} skipped without semantics), {accepted} objects inserted"
    )
    print(f"wrote {out_root}")
    return EXIT_OK


def cmd_dwa_sim(config: ProjectConfig, out_dir: Path, losses_path: Optional[Path]) -> int:
    losses_path = losses_path or config.losses_csv
    if losses_path is not None:
        try:
            text = Path(losses_path).read_text()
        except OSError as exc:
            raise DataIOError(f"cannot read loss CSV {losses_path}: {exc}") from exc
        snapshots = balance.read_loss_csv(text, config.catalog)
    else:
        if config.synthetic is None:
            raise ValidationError("dwa-sim needs [dwa.synthetic] heads or a loss CSV")
        import numpy as np

        snapshots = balance.synthetic_snapshots(
            config.synthetic.heads,
            config.synthetic.iterations,
            n_pos=config.synthetic.n_pos,
            rng=np.random.default_rng(config.seed),
        )
    trajectory = balance.run_trajectory(snapshots, config.dwa)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "trajectory.csv"
    csv_path.write_text(balance.trajectory_to_csv(trajectory, config.catalog))
    if len(trajectory):
        final = trajectory.steps[-1]
        summary = ", ".join(
            f"{config.catalog.name_of(c)}={final.alpha[c]:.5f}" for c in sorted(final.alpha)
        )
        print(f"final weights (t={final.timestep}): {summary}")
    else:
        print("loss stream shorter than one window; no weights emitted")
    print(f"wrote {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidar-rebalance",
        description="Class-imbalance toolkit: GT database, contextual sampling, DWA weights.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("stats", "per-class object counts and percentages"),
        ("build-db", "build and persist the ground-truth object database"),
        ("augment", "contextually augment every frame and write audits"),
        ("dwa-sim", "simulate the balancing-weight trajectory"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="project TOML file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if name == "augment":
            p.add_argument("--mode", default=None, choices=sampler.SAMPLER_MODES)
        if name == "dwa-sim":
            p.add_argument("--losses", default=None, help="recorded loss CSV instead of synthetic")
    return parser


def _apply_overrides(config: ProjectConfig, args) -> ProjectConfig:
    from dataclasses import replace

    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        out = Path(args.out)
        config = replace(config, output_dir=out, database_dir=out / "gt_database")
    if getattr(args, "mode", None):
        config = replace(config, sampler=type(config.sampler)(
            mode=args.mode,
            collision_iou=config.sampler.collision_iou,
            knn_k=config.sampler.knn_k,
            retry_budget=config.sampler.retry_budget,
            permissive_off_map=config.sampler.permissive_off_map,
            grid=config.sampler.grid,
        ))
    return config


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = _apply_overrides(load_project_config(args.config), args)
        out_dir = config.output_dir
        if args.command == "stats":
            return cmd_stats(config, out_dir)
        if args.command == "build-db":
            return cmd_build_db(config, out_dir)
        if args.command == "augment":
            return cmd_augment(config, out_dir)
        if args.command == "dwa-sim":
            losses = Path(args.losses) if args.losses else None
            return cmd_dwa_sim(config, out_dir, losses)
        raise ValidationError(f"unknown command {args.command!r}")
    except (FormatError, DataIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

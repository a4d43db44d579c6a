"""Shared synthetic-data builders for the test suite.

The synthetic corpus mimics the KITTI object layout: a front camera with
the usual axis-permutation extrinsic, boxes restricted to a BEV range
whose ground anchors always project inside the image, and semantic maps
painted so that BEV y > 0 is "sidewalk" and y < 0 is "road" (the image
column of a projected ground anchor decides, which matches that split
exactly for this camera).
"""
import math
from pathlib import Path

import numpy as np

from lidar_rebalance.core import (
    Box3D,
    Calibration,
    ClassCatalog,
    PointCloud,
    SemanticImageMap,
    SemanticPointMap,
)
from lidar_rebalance.geometry import BevGridSpec, bev_iou
from lidar_rebalance.ingest import (
    FrameBundle,
    format_label_line,
    write_point_cloud,
    write_semantic_map,
    write_semantic_points,
)

CAR, PED, CYC = 0, 1, 2

IMG_W, IMG_H = 312, 94
FX = FY = 175.0
CX, CY = 155.0, 45.0

# box placements stay inside this range so every ground anchor projects
# into the image (no off-map noise unless a test wants it)
X_RANGE = (12.0, 55.0)
Y_RANGE = (-10.0, 10.0)

LEGEND = {0: "other", 1: "road", 2: "sidewalk"}

DIMS = {
    CAR: (4.0, 1.8, 1.5),
    PED: (0.8, 0.6, 1.75),
    CYC: (1.8, 0.6, 1.75),
}
GROUND_Z = -1.73


def kitti_catalog(targets=None, min_points=None):
    return ClassCatalog.build(
        names=["Car", "Pedestrian", "Cyclist"],
        targets=targets if targets is not None else {"Car": 15, "Pedestrian": 10, "Cyclist": 10},
        # Table-style capitalization on purpose: matching must normalize it
        associations={
            "Car": ["road"],
            "Pedestrian": ["Sidewalk"],
            "Cyclist": ["sidewalk", "road"],
        },
        min_points=min_points or {},
        default_min_points=5,
    )


def make_calibration() -> Calibration:
    intrinsic = np.array([[FX, 0.0, CX], [0.0, FY, CY], [0.0, 0.0, 1.0]])
    extrinsic = np.array(
        [
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, -0.08],
            [1.0, 0.0, 0.0, -0.27],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    return Calibration(intrinsic, extrinsic, IMG_W, IMG_H)


def calib_text() -> str:
    """The same camera as make_calibration, in KITTI calib-file form."""
    p2 = f"P2: {FX} 0 {CX} 0 0 {FY} {CY} 0 0 0 1 0"
    r0 = "R0_rect: 1 0 0 0 1 0 0 0 1"
    tr = "Tr_velo_to_cam: 0 -1 0 0 0 0 -1 -0.08 1 0 0 -0.27"
    return "\n".join([p2, r0, tr]) + "\n"


def semantic_image(kind: str) -> SemanticImageMap:
    """kind: 'split' (left sidewalk / right road), 'road', 'sidewalk'."""
    labels = np.zeros((IMG_H, IMG_W), dtype=np.uint8)
    if kind == "split":
        labels[:, : int(CX)] = 2
        labels[:, int(CX) :] = 1
    elif kind == "road":
        labels[:] = 1
    elif kind == "sidewalk":
        labels[:] = 2
    else:
        raise ValueError(kind)
    return SemanticImageMap(IMG_W, IMG_H, labels, LEGEND)


def semantic_points(kind: str, spacing: float = 2.0) -> SemanticPointMap:
    """Ground-plane labeled points following the same BEV split rule."""
    xs = np.arange(X_RANGE[0] - 2, X_RANGE[1] + 2, spacing)
    ys = np.arange(Y_RANGE[0] - 2, Y_RANGE[1] + 2, spacing)
    gx, gy = np.meshgrid(xs, ys)
    xyz = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    if kind == "split":
        labels = np.where(xyz[:, 1] > 0, 2, 1)
    elif kind == "road":
        labels = np.ones(len(xyz), dtype=int)
    elif kind == "sidewalk":
        labels = np.full(len(xyz), 2, dtype=int)
    else:
        raise ValueError(kind)
    return SemanticPointMap(xyz, labels, LEGEND)


def _points_inside_box(box: Box3D, n: int, rng) -> np.ndarray:
    local = rng.uniform(-0.45, 0.45, size=(n, 3)) * np.array([box.l, box.w, box.h])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    world = local @ rot.T + box.center
    out = np.empty((n, 4), dtype=np.float32)
    out[:, :3] = world
    out[:, 3] = rng.uniform(0.0, 1.0, size=n)
    return out


def _place_boxes(counts, rng, margin=1.0):
    boxes = []
    for class_id, n in counts.items():
        l, w, h = DIMS[class_id]
        for _ in range(n):
            for _attempt in range(200):
                x = rng.uniform(*X_RANGE)
                y = rng.uniform(*Y_RANGE)
                yaw = rng.uniform(-math.pi, math.pi)
                cand = Box3D(x, y, GROUND_Z + h / 2.0, l, w, h, yaw, class_id)
                reach = math.hypot(l, w) / 2.0
                if all(
                    math.hypot(b.cx - x, b.cy - y) > reach + math.hypot(b.l, b.w) / 2.0 + margin
                    for b in boxes
                ):
                    boxes.append(cand)
                    break
            else:
                raise RuntimeError("could not place a non-overlapping box")
    return boxes


def make_frame(
    frame_id: str,
    rng,
    counts=None,
    semantic_kind="split",
    semantic_format="image",
    n_ground=200,
    points_per_box=(20, 50),
) -> FrameBundle:
    counts = counts if counts is not None else {CAR: 3, PED: 1, CYC: 1}
    calib = make_calibration()
    boxes = _place_boxes(counts, rng)
    parts = []
    if n_ground:
        ground = np.empty((n_ground, 4), dtype=np.float32)
        ground[:, 0] = rng.uniform(*X_RANGE, size=n_ground)
        ground[:, 1] = rng.uniform(*Y_RANGE, size=n_ground)
        ground[:, 2] = rng.uniform(GROUND_Z - 0.05, GROUND_Z + 0.05, size=n_ground)
        ground[:, 3] = rng.uniform(0.0, 1.0, size=n_ground)
        parts.append(ground)
    for box in boxes:
        parts.append(_points_inside_box(box, int(rng.integers(*points_per_box)), rng))
    cloud = PointCloud(np.concatenate(parts, axis=0) if parts else np.zeros((0, 4)), frame_id)
    if semantic_kind is None:
        semantic = None
    elif semantic_format == "image":
        semantic = semantic_image(semantic_kind)
    else:
        semantic = semantic_points(semantic_kind)
    return FrameBundle(cloud=cloud, boxes=tuple(boxes), calib=calib, semantic=semantic)


def imbalanced_counts(n_frames: int):
    """Per-frame class counts whose corpus totals hit 83% / 13% / 4%."""
    per_frame = []
    for i in range(n_frames):
        per_frame.append(
            {
                CAR: 10 if i >= 2 else 9,           # 10 per frame, minus 2 overall
                PED: 2 if i < n_frames * 28 // 50 else 1,
                CYC: 1 if i < n_frames * 24 // 50 else 0,
            }
        )
    return per_frame


def build_corpus(n_frames, seed=7, semantic_kind="split", counts_fn=None, semantic_format="image"):
    frames = []
    for i in range(n_frames):
        rng = np.random.default_rng(seed * 100_003 + i)
        counts = counts_fn(i) if counts_fn else None
        frames.append(
            make_frame(
                f"{i:06d}",
                rng,
                counts=counts,
                semantic_kind=semantic_kind,
                semantic_format=semantic_format,
            )
        )
    return frames


def write_dataset(root, frames, catalog, semantic_format="image", skip_semantic_for=()):
    """Lay the frames out as a KITTI-style dataset directory."""
    root = Path(root)
    for sub in ("velodyne", "label_2", "calib", "semantic"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    legend_written = False
    for frame in frames:
        fid = frame.frame_id
        (root / "velodyne" / f"{fid}.bin").write_bytes(write_point_cloud(frame.cloud))
        lines = [format_label_line(b, frame.calib, catalog) for b in frame.boxes]
        (root / "label_2" / f"{fid}.txt").write_text("".join(l + "\n" for l in lines))
        (root / "calib" / f"{fid}.txt").write_text(calib_text())
        if frame.semantic is not None and fid not in skip_semantic_for:
            if semantic_format == "image":
                blob, legend = write_semantic_map(frame.semantic)
                (root / "semantic" / f"{fid}.sem").write_bytes(blob)
            else:
                blob, legend = write_semantic_points(frame.semantic)
                (root / "semantic" / f"{fid}.spt").write_bytes(blob)
            if not legend_written:
                (root / "semantic" / "legend.txt").write_text(legend)
                legend_written = True
    return root


def config_toml(
    dataset_root="data",
    out_dir="out",
    mode="contextual-filter",
    seed=1234,
    targets=None,
    min_points=None,
    semantic_kind="image",
    grid=True,
    extra="",
):
    targets = targets if targets is not None else {"Car": 0, "Pedestrian": 2, "Cyclist": 2}
    min_points = min_points or {}
    lines = [
        f"seed = {seed}",
        "",
        "[dataset]",
        f'root = "{dataset_root}"',
        f'semantic_kind = "{semantic_kind}"',
        f"image_width = {IMG_W}",
        f"image_height = {IMG_H}",
        "",
        "[output]",
        f'dir = "{out_dir}"',
        "",
        "[catalog]",
        'classes = ["Car", "Pedestrian", "Cyclist"]',
        "[catalog.targets]",
    ]
    lines += [f"{k} = {v}" for k, v in targets.items()]
    lines += [
        "[catalog.associations]",
        'Car = ["road"]',
        'Pedestrian = ["Sidewalk"]',
        'Cyclist = ["sidewalk", "road"]',
    ]
    if min_points:
        lines.append("[catalog.min_points]")
        lines += [f"{k} = {v}" for k, v in min_points.items()]
    lines += [
        "",
        "[sampler]",
        f'mode = "{mode}"',
        "collision_iou = 0.0",
        "knn_k = 5",
        "retry_budget = 10",
    ]
    if grid:
        lines += [
            "[sampler.grid]",
            f"x_min = {X_RANGE[0]}",
            f"y_min = {Y_RANGE[0]}",
            "cell_size = 1.0",
            f"nx = {int(X_RANGE[1] - X_RANGE[0])}",
            f"ny = {int(Y_RANGE[1] - Y_RANGE[0])}",
        ]
    lines += [
        "",
        "[dwa]",
        "temperature = 2.0",
        "window = 10",
    ]
    if extra:
        lines.append(extra)
    return "\n".join(lines) + "\n"


def grid_spec():
    return BevGridSpec(
        x_min=X_RANGE[0],
        y_min=Y_RANGE[0],
        cell_size=1.0,
        nx=int(X_RANGE[1] - X_RANGE[0]),
        ny=int(Y_RANGE[1] - Y_RANGE[0]),
    )


def assert_no_pairwise_overlap(boxes, tau=0.0):
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            iou = bev_iou(boxes[i], boxes[j])
            assert iou <= tau + 1e-12, f"boxes {i},{j} overlap with IoU {iou}"

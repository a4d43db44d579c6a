"""Bit-exact readers and writers for KITTI-format artifacts and semantic
maps, plus object-level dataset statistics.

Velodyne clouds are little-endian float32 (x, y, z, intensity) quadruples.
Labels are the usual 15-column camera-frame text lines. Semantic image
maps use a self-describing container (magic, LE u32 width/height, raw u8
grid) with a sidecar text legend, chosen over image codecs so round trips
are byte-exact. Readers reject malformed input with positioned errors;
there are no partial silent results.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Box3D,
    Calibration,
    ClassCatalog,
    PointCloud,
    SemanticImageMap,
    SemanticPointMap,
    SemanticSource,
    wrap_yaw,
)
from .errors import FormatError, ValidationError
from .geometry import box_camera_to_lidar, box_lidar_to_camera

__all__ = [
    "FrameBundle",
    "ClassStats",
    "read_point_cloud",
    "write_point_cloud",
    "read_labels",
    "format_label_line",
    "read_calibration",
    "read_semantic_map",
    "write_semantic_map",
    "read_semantic_points",
    "write_semantic_points",
    "dataset_stats",
]

log = logging.getLogger(__name__)

POINT_RECORD_BYTES = 16  # four LE float32 per point
SEMANTIC_MAP_MAGIC = b"SEMMAP01"
SEMANTIC_POINTS_MAGIC = b"SEMPTS01"

# KITTI object images; calib files do not carry the size themselves
DEFAULT_IMAGE_WIDTH = 1242
DEFAULT_IMAGE_HEIGHT = 375

LABEL_COLUMNS = 15  # type trunc occ alpha bbox(4) h w l x y z rotation_y
DONT_CARE = "DontCare"


@dataclass(frozen=True)
class FrameBundle:
    """One frame's cloud, LiDAR-frame boxes, calibration, and optional
    semantic source. Frames lacking semantics are flagged, not rejected."""

    cloud: PointCloud
    boxes: Tuple[Box3D, ...]
    calib: Calibration
    semantic: Optional[SemanticSource] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def frame_id(self) -> str:
        return self.cloud.frame_id

    @property
    def has_semantics(self) -> bool:
        return self.semantic is not None


@dataclass(frozen=True)
class ClassStats:
    """Per-class labeled-object counts and percentages of the total."""

    counts: Mapping[int, int]
    percents: Mapping[int, float]
    total: int

    def __post_init__(self):
        if self.total:
            s = math.fsum(self.percents.values())
            if abs(s - 100.0) > 0.01:
                raise ValidationError(f"percentages sum to {s}, expected 100 +- 0.01")

    def to_csv(self, catalog: ClassCatalog) -> str:
        lines = ["class,count,percent"]
        for cid in catalog.class_ids:
            lines.append(
                f"{catalog.name_of(cid)},{self.counts.get(cid, 0)},"
                f"{self.percents.get(cid, 0.0):.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_table(self, catalog: ClassCatalog) -> str:
        width = max((len(catalog.name_of(c)) for c in catalog.class_ids), default=5)
        lines = [f"{'class':<{width}}  {'count':>8}  {'percent':>8}"]
        for cid in catalog.class_ids:
            lines.append(
                f"{catalog.name_of(cid):<{width}}  {self.counts.get(cid, 0):>8}  "
                f"{self.percents.get(cid, 0.0):>7.2f}%"
            )
        lines.append(f"{'total':<{width}}  {self.total:>8}")
        return "\n".join(lines)


def read_point_cloud(data: bytes, frame_id: str = "") -> PointCloud:
    """Decode consecutive little-endian float32 (x, y, z, intensity) records."""
    if len(data) % POINT_RECORD_BYTES != 0:
        raise FormatError(
            f"truncated point record: {len(data)} bytes is not a multiple of {POINT_RECORD_BYTES}",
            offset=len(data) - len(data) % POINT_RECORD_BYTES,
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(arr, frame_id)


def write_point_cloud(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.data, dtype="<f4").tobytes()


def read_labels(
    text: str,
    calib: Calibration,
    catalog: ClassCatalog,
    strict: bool = False,
) -> List[Box3D]:
    """Parse KITTI label lines into LiDAR-frame boxes.

    DontCare lines are dropped. Classes outside the catalog (KITTI has Van,
    Truck, Misc, ...) are skipped with a warning, or rejected when strict.
    """
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < LABEL_COLUMNS:
            raise FormatError(
                f"label line has {len(fields)} fields, expected >= {LABEL_COLUMNS}",
                line=lineno,
            )
        name = fields[0]
        if name == DONT_CARE:
            continue
        if not catalog.has_class(name):
            if strict:
                raise FormatError(f"unknown object class {name!r}", line=lineno)
            log.warning("skipping unknown object class %r (line %d)", name, lineno)
            continue
        try:
            h, w, l = (float(v) for v in fields[8:11])
            x, y, z = (float(v) for v in fields[11:14])
            rotation_y = float(fields[14])
        except ValueError as exc:
            raise FormatError(f"malformed label line: {exc}", line=lineno) from None
        try:
            boxes.append(
                box_camera_to_lidar(h, w, l, x, y, z, rotation_y, calib, catalog.id_of(name))
            )
        except ValidationError as exc:
            raise FormatError(f"invalid box: {exc}", line=lineno) from None
    return boxes


def _box_corners_lidar(box: Box3D) -> np.ndarray:
    dx, dy, dz = box.l / 2.0, box.w / 2.0, box.h / 2.0
    local = np.array(
        [[sx * dx, sy * dy, sz * dz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    )
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def _projected_bbox(box: Box3D, calib: Calibration) -> Tuple[float, float, float, float]:
    corners = _box_corners_lidar(box)
    cam = corners @ calib.lidar_to_camera[:3, :3].T + calib.lidar_to_camera[:3, 3]
    front = cam[cam[:, 2] > 1e-6]
    if front.shape[0] == 0:
        return 0.0, 0.0, 0.0, 0.0
    uvw = front @ calib.intrinsic.T
    u = uvw[:, 0] / uvw[:, 2]
    v = uvw[:, 1] / uvw[:, 2]
    x1 = min(max(float(u.min()), 0.0), calib.image_width - 1.0)
    x2 = min(max(float(u.max()), 0.0), calib.image_width - 1.0)
    y1 = min(max(float(v.min()), 0.0), calib.image_height - 1.0)
    y2 = min(max(float(v.max()), 0.0), calib.image_height - 1.0)
    return x1, y1, x2, y2


def format_label_line(box: Box3D, calib: Calibration, catalog: ClassCatalog) -> str:
    """Render one LiDAR-frame box as a KITTI label line (camera frame)."""
    h, w, l, x, y, z, ry = box_lidar_to_camera(box, calib)
    alpha = wrap_yaw(ry - math.atan2(x, z))
    x1, y1, x2, y2 = _projected_bbox(box, calib)
    name = catalog.name_of(box.class_id)
    return (
        f"{name} 0.00 0 {alpha:.6f} {x1:.6f} {y1:.6f} {x2:.6f} {y2:.6f} "
        f"{h:.6f} {w:.6f} {l:.6f} {x:.6f} {y:.6f} {z:.6f} {ry:.6f}"
    )


def _parse_matrix(fields: Sequence[str], rows: int, cols: int, key: str) -> np.ndarray:
    if len(fields) != rows * cols:
        raise FormatError(f"key {key} has {len(fields)} values, expected {rows * cols}")
    try:
        return np.array([float(v) for v in fields], dtype=np.float64).reshape(rows, cols)
    except ValueError as exc:
        raise FormatError(f"key {key} holds a non-numeric value: {exc}") from None


def read_calibration(
    text: str,
    image_width: int = DEFAULT_IMAGE_WIDTH,
    image_height: int = DEFAULT_IMAGE_HEIGHT,
) -> Calibration:
    """Parse a KITTI calib file (keys P2, R0_rect, Tr_velo_to_cam).

    The returned intrinsic is P2's 3x3 block; the rigid lidar-to-camera
    transform composes rectification with velo-to-cam and absorbs P2's
    camera-offset column, so intrinsic @ (lidar_to_camera @ X) reproduces
    the full P2 @ R0_rect @ Tr_velo_to_cam projection exactly.
    """
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        entries[key.strip()] = rest.split()
    for key in ("P2", "R0_rect", "Tr_velo_to_cam"):
        if key not in entries:
            raise FormatError(f"calibration is missing key {key}")
    p2 = _parse_matrix(entries["P2"], 3, 4, "P2")
    r0 = _parse_matrix(entries["R0_rect"], 3, 3, "R0_rect")
    tr = _parse_matrix(entries["Tr_velo_to_cam"], 3, 4, "Tr_velo_to_cam")

    intrinsic = p2[:, :3]
    if intrinsic[0, 0] <= 0 or intrinsic[1, 1] <= 0:
        raise FormatError("P2 focal entries must be positive")
    cam_offset = np.linalg.solve(intrinsic, p2[:, 3])
    lidar_to_camera = np.eye(4)
    lidar_to_camera[:3, :3] = r0 @ tr[:, :3]
    lidar_to_camera[:3, 3] = r0 @ tr[:, 3] + cam_offset
    return Calibration(intrinsic, lidar_to_camera, image_width, image_height)


def write_semantic_map(sem: SemanticImageMap) -> Tuple[bytes, str]:
    """Serialize to (container bytes, legend text)."""
    header = SEMANTIC_MAP_MAGIC + struct.pack("<II", sem.width, sem.height)
    legend = "".join(f"{i}\t{sem.legend[i]}\n" for i in sorted(sem.legend))
    return header + sem.labels.astype(np.uint8).tobytes(), legend


def _parse_legend(text: str) -> dict:
    legend = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        ident, sep, name = line.partition("\t")
        if not sep or not name.strip():
            raise FormatError("legend line must be '<id><TAB><name>'", line=lineno)
        try:
            legend[int(ident)] = name.strip()
        except ValueError:
            raise FormatError(f"legend id {ident!r} is not an integer", line=lineno) from None
    return legend


def read_semantic_map(data: bytes, legend_text: str) -> SemanticImageMap:
    if len(data) < len(SEMANTIC_MAP_MAGIC) + 8:
        raise FormatError("semantic map container shorter than its header")
    if data[: len(SEMANTIC_MAP_MAGIC)] != SEMANTIC_MAP_MAGIC:
        raise FormatError("bad semantic map magic")
    width, height = struct.unpack_from("<II", data, len(SEMANTIC_MAP_MAGIC))
    payload = data[len(SEMANTIC_MAP_MAGIC) + 8 :]
    if len(payload) != width * height:
        raise FormatError(
            f"declared {width}x{height} grid needs {width * height} bytes, got {len(payload)}",
            offset=len(SEMANTIC_MAP_MAGIC) + 8,
        )
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    try:
        return SemanticImageMap(width, height, labels, _parse_legend(legend_text))
    except ValidationError as exc:
        raise FormatError(str(exc)) from None


_POINT_LABEL_DTYPE = np.dtype([("xyz", "<f4", 3), ("label", "<u4")])


def write_semantic_points(sem: SemanticPointMap) -> Tuple[bytes, str]:
    """Serialize labeled points to (container bytes, legend text)."""
    rec = np.empty(sem.xyz.shape[0], dtype=_POINT_LABEL_DTYPE)
    rec["xyz"] = sem.xyz
    rec["label"] = sem.labels
    legend = "".join(f"{i}\t{sem.legend[i]}\n" for i in sorted(sem.legend))
    return SEMANTIC_POINTS_MAGIC + struct.pack("<I", len(rec)) + rec.tobytes(), legend


def read_semantic_points(data: bytes, legend_text: str) -> SemanticPointMap:
    head = len(SEMANTIC_POINTS_MAGIC)
    if len(data) < head + 4:
        raise FormatError("semantic point container shorter than its header")
    if data[:head] != SEMANTIC_POINTS_MAGIC:
        raise FormatError("bad semantic point magic")
    (n,) = struct.unpack_from("<I", data, head)
    payload = data[head + 4 :]
    if len(payload) != n * _POINT_LABEL_DTYPE.itemsize:
        raise FormatError(
            f"declared {n} records need {n * _POINT_LABEL_DTYPE.itemsize} bytes, got {len(payload)}"
        )
    rec = np.frombuffer(payload, dtype=_POINT_LABEL_DTYPE)
    try:
        return SemanticPointMap(
            rec["xyz"].astype(np.float64), rec["label"].astype(np.int64), _parse_legend(legend_text)
        )
    except ValidationError as exc:
        raise FormatError(str(exc)) from None


def dataset_stats(frames: Iterable[FrameBundle], catalog: ClassCatalog) -> ClassStats:
    """Exact per-class box counts and percentages over a corpus. Counts are
    object-level, not frame-level, and invariant under frame ordering."""
    counts = {cid: 0 for cid in catalog.class_ids}
    for frame in frames:
        for box in frame.boxes:
            catalog.name_of(box.class_id)
            counts[box.class_id] += 1
    total = sum(counts.values())
    percents = {
        cid: (100.0 * n / total if total else 0.0) for cid, n in counts.items()
    }
    return ClassStats(counts, percents, total)

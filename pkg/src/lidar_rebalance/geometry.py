"""Metric geometry: oriented-box tests, BEV IoU, camera projection,
ground anchoring, occupancy grids, and pillar tuple augmentation.

All operations are pure functions over immutable inputs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .core import (
    Box3D,
    Calibration,
    ClassCatalog,
    Point,
    PointCloud,
    SemanticImageMap,
    SemanticPointMap,
    SemanticSource,
    wrap_yaw,
)
from .errors import ValidationError

__all__ = [
    "Pixel",
    "Outside",
    "BevGridSpec",
    "OccupancyGrid",
    "PillarGrid",
    "point_in_obb",
    "points_in_obb",
    "bev_iou",
    "extract_points_in_box",
    "ground_anchor",
    "project_to_image",
    "back_project",
    "semantic_label_at",
    "occupancy_grid",
    "pillarize",
    "box_camera_to_lidar",
    "box_lidar_to_camera",
]

MIN_CAMERA_DEPTH = 1e-6


@dataclass(frozen=True)
class Pixel:
    """Continuous pixel coordinates with camera-frame depth."""

    u: float
    v: float
    depth: float

    def __post_init__(self):
        if not self.depth > 0:
            raise ValidationError(f"pixel depth must be positive, got {self.depth}")


class Outside(enum.Enum):
    """Reportable non-pixel projection outcomes. Not failures."""

    BEHIND_CAMERA = "behind-camera"
    OUT_OF_IMAGE = "out-of-image"


@dataclass(frozen=True)
class BevGridSpec:
    """Axis-aligned BEV lattice: origin corner, square cell size, cell counts."""

    x_min: float
    y_min: float
    cell_size: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValidationError(f"cell_size must be positive, got {self.cell_size}")
        if self.nx <= 0 or self.ny <= 0:
            raise ValidationError(f"grid extents must be positive, got {self.nx}x{self.ny}")

    def cell_center(self, ix: int, iy: int) -> Tuple[float, float]:
        return (
            self.x_min + (ix + 0.5) * self.cell_size,
            self.y_min + (iy + 0.5) * self.cell_size,
        )


@dataclass(frozen=True)
class OccupancyGrid:
    """BEV probability map over admissible placement cells.

    ``prob`` is (ny, nx) row-major; it sums to 1 when any cell is
    admissible and is identically zero otherwise.
    """

    spec: BevGridSpec
    prob: np.ndarray

    def __post_init__(self):
        prob = np.asarray(self.prob, dtype=np.float64)
        if prob.shape != (self.spec.ny, self.spec.nx):
            raise ValidationError(
                f"prob shape {prob.shape} does not match grid {self.spec.ny}x{self.spec.nx}"
            )
        if np.any(prob < 0):
            raise ValidationError("occupancy probabilities must be non-negative")
        total = float(prob.sum())
        if total != 0.0 and abs(total - 1.0) > 1e-9:
            raise ValidationError(f"occupancy probabilities sum to {total}, expected 1 or 0")
        if prob.base is not None or prob.flags.writeable:
            prob = prob.copy()
        prob.flags.writeable = False
        object.__setattr__(self, "prob", prob)

    @property
    def is_zero(self) -> bool:
        return float(self.prob.sum()) == 0.0

    def sample_cell(self, rng: np.random.Generator) -> Optional[Tuple[int, int]]:
        """Draw a cell index (ix, iy) proportional to prob; None when all-zero."""
        if self.is_zero:
            return None
        flat = rng.choice(self.prob.size, p=self.prob.ravel())
        iy, ix = divmod(int(flat), self.spec.nx)
        return ix, iy


@dataclass(frozen=True)
class PillarGrid:
    """Per-pillar augmented point tuples (x, y, z, i, x_c, y_c, z_c, x_p, y_p).

    The *_c entries are signed offsets from the arithmetic mean of the
    pillar's points; x_p, y_p are offsets from the pillar center.
    """

    x_min: float
    y_min: float
    pillar_size: float
    nx: int
    ny: int
    pillars: dict  # (ix, iy) -> (n, 9) float32 array
    dropped: int

    def point_count(self) -> int:
        return sum(arr.shape[0] for arr in self.pillars.values())


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def points_in_obb(xyz: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean mask of points inside the oriented box; boundary counts as inside."""
    pts = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    local = (pts - box.center) @ _rot_z(-box.yaw).T
    return (
        (np.abs(local[:, 0]) <= box.l / 2.0)
        & (np.abs(local[:, 1]) <= box.w / 2.0)
        & (np.abs(local[:, 2]) <= box.h / 2.0)
    )


def point_in_obb(p: Union[Point, Tuple[float, float, float]], box: Box3D) -> bool:
    """True iff the point lies inside (or on the boundary of) the box."""
    xyz = p.xyz if isinstance(p, Point) else np.asarray(p[:3], dtype=np.float64)
    return bool(points_in_obb(xyz.reshape(1, 3), box)[0])


def extract_points_in_box(cloud: PointCloud, box: Box3D) -> PointCloud:
    """Exactly the cloud points for which point_in_obb holds, in original order."""
    if len(cloud) == 0:
        return PointCloud.empty(cloud.frame_id)
    mask = points_in_obb(cloud.xyz, box)
    return PointCloud(cloud.data[mask], cloud.frame_id)


def box_bev_corners(box: Box3D) -> np.ndarray:
    """(4, 2) BEV footprint corners, counterclockwise."""
    dx, dy = box.l / 2.0, box.w / 2.0
    local = np.array([[dx, dy], [-dx, dy], [-dx, -dy], [dx, -dy]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def _polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    area = 0.0
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]):
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW ``clip``."""

    def inside(p, a, b):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0

    def intersection(s, e, a, b):
        dc = (a[0] - b[0], a[1] - b[1])
        dp = (s[0] - e[0], s[1] - e[1])
        n1 = a[0] * b[1] - a[1] * b[0]
        n2 = s[0] * e[1] - s[1] * e[0]
        denom = dc[0] * dp[1] - dc[1] * dp[0]
        if denom == 0.0:
            return e  # collinear edges; endpoint keeps the polygon degenerate-safe
        return ((n1 * dp[0] - n2 * dc[0]) / denom, (n1 * dp[1] - n2 * dc[1]) / denom)

    output = list(subject)
    a = clip[-1]
    for b in clip:
        if not output:
            return []
        source, output = output, []
        s = source[-1]
        for e in source:
            if inside(e, a, b):
                if not inside(s, a, b):
                    output.append(intersection(s, e, a, b))
                output.append(e)
            elif inside(s, a, b):
                output.append(intersection(s, e, a, b))
            s = e
        a = b
    return output


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection-over-union of the yaw-rotated BEV footprints, in [0, 1].

    Exact convex polygon clipping; degenerate (zero-area) intersections
    return 0 so collision filtering stays deterministic. Operands are put
    in a canonical order first, making the result exactly symmetric.
    """
    ca = [tuple(p) for p in box_bev_corners(a)]
    cb = [tuple(p) for p in box_bev_corners(b)]
    if cb < ca:
        ca, cb = cb, ca
    inter = _polygon_area(_clip_polygon(ca, cb))
    if inter <= 0.0:
        return 0.0
    union = _polygon_area(ca) + _polygon_area(cb) - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def ground_anchor(box: Box3D) -> Point:
    """Box center projected to the ground plane: (cx, cy, 0)."""
    return Point(box.cx, box.cy, 0.0)


def project_to_image(
    p: Union[Point, Tuple[float, float, float]], calib: Calibration
) -> Union[Pixel, Outside]:
    """LiDAR point -> pixel via the rigid extrinsic and pinhole intrinsic.

    Returns Outside.BEHIND_CAMERA when camera-frame depth <= 1e-6 and
    Outside.OUT_OF_IMAGE when (u, v) falls outside [0, W) x [0, H).
    """
    xyz = p.xyz if isinstance(p, Point) else np.asarray(p[:3], dtype=np.float64)
    cam = calib.lidar_to_camera[:3, :3] @ xyz + calib.lidar_to_camera[:3, 3]
    depth = float(cam[2])
    if depth <= MIN_CAMERA_DEPTH:
        return Outside.BEHIND_CAMERA
    uvw = calib.intrinsic @ cam
    u, v = float(uvw[0] / depth), float(uvw[1] / depth)
    if not (0.0 <= u < calib.image_width and 0.0 <= v < calib.image_height):
        return Outside.OUT_OF_IMAGE
    return Pixel(u, v, depth)


def back_project(pixel: Pixel, calib: Calibration) -> Point:
    """Inverse of project_to_image along the pixel ray at the stored depth."""
    ray = np.linalg.solve(calib.intrinsic, np.array([pixel.u, pixel.v, 1.0]))
    cam = ray * (pixel.depth / ray[2])
    xyz = calib.camera_to_lidar[:3, :3] @ cam + calib.camera_to_lidar[:3, 3]
    return Point(float(xyz[0]), float(xyz[1]), float(xyz[2]))


def semantic_label_at(
    x: float,
    y: float,
    semantic: SemanticSource,
    calib: Optional[Calibration] = None,
    k: int = 5,
) -> Tuple[Optional[str], str]:
    """Normalized semantic name under the ground point (x, y, 0).

    Returns (name, "ok") on success. Image maps need a calibration and may
    instead return (None, "behind-camera") or (None, "off-map"); point maps
    classify by majority vote over the k nearest labeled points, ties broken
    by the single nearest.
    """
    if isinstance(semantic, SemanticImageMap):
        if calib is None:
            raise ValidationError("image-map semantic lookup requires a calibration")
        result = project_to_image((x, y, 0.0), calib)
        if result is Outside.BEHIND_CAMERA:
            return None, "behind-camera"
        if result is Outside.OUT_OF_IMAGE:
            return None, "off-map"
        return semantic.label_name_at(result.u, result.v), "ok"

    if isinstance(semantic, SemanticPointMap):
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        k_eff = min(k, semantic.xyz.shape[0])
        dists, idx = semantic.kdtree.query([x, y, 0.0], k=k_eff)
        dists = np.atleast_1d(dists)
        idx = np.atleast_1d(idx)
        votes = semantic.labels[idx]
        ids, counts = np.unique(votes, return_counts=True)
        winners = ids[counts == counts.max()]
        if len(winners) == 1:
            winner = int(winners[0])
        else:
            # tie: the nearest point among the tied labels decides
            best = min(
                (float(d), int(l)) for d, l in zip(dists, votes) if int(l) in set(int(w) for w in winners)
            )
            winner = best[1]
        return semantic.normalized_legend[winner], "ok"

    raise ValidationError(f"unsupported semantic source {type(semantic).__name__}")


def _admissible_image_cells(
    semantic: SemanticImageMap, allowed, spec: BevGridSpec, calib: Calibration
) -> np.ndarray:
    """Vectorized twin of per-cell semantic_label_at over an image map."""
    xs = spec.x_min + (np.arange(spec.nx) + 0.5) * spec.cell_size
    ys = spec.y_min + (np.arange(spec.ny) + 0.5) * spec.cell_size
    gx, gy = np.meshgrid(xs, ys)  # (ny, nx)
    centers = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    cam = centers @ calib.lidar_to_camera[:3, :3].T + calib.lidar_to_camera[:3, 3]
    ok = cam[:, 2] > MIN_CAMERA_DEPTH
    admissible = np.zeros(gx.size, dtype=bool)
    if np.any(ok):
        uvw = cam[ok] @ calib.intrinsic.T
        u = uvw[:, 0] / cam[ok, 2]
        v = uvw[:, 1] / cam[ok, 2]
        in_img = (u >= 0) & (u < calib.image_width) & (v >= 0) & (v < calib.image_height)
        allowed_ids = [i for i, n in semantic.normalized_legend.items() if n in allowed]
        if allowed_ids and np.any(in_img):
            labels = semantic.labels[
                np.floor(v[in_img]).astype(np.int64), np.floor(u[in_img]).astype(np.int64)
            ]
            hits = np.isin(labels, allowed_ids)
            sub = np.zeros(int(ok.sum()), dtype=bool)
            sub[in_img] = hits
            admissible[ok] = sub
    return admissible.reshape(spec.ny, spec.nx)


def occupancy_grid(
    semantic: SemanticSource,
    class_id: int,
    catalog: ClassCatalog,
    spec: BevGridSpec,
    calib: Optional[Calibration] = None,
    k: int = 5,
) -> OccupancyGrid:
    """Uniform probability over grid cells whose center's semantic label is
    associated with ``class_id``; all-zero when no cell is admissible."""
    allowed = catalog.associated_labels(class_id)
    if isinstance(semantic, SemanticImageMap):
        if calib is None:
            raise ValidationError("image-map occupancy grid requires a calibration")
        admissible = _admissible_image_cells(semantic, allowed, spec, calib)
    else:
        admissible = np.zeros((spec.ny, spec.nx), dtype=bool)
        for iy in range(spec.ny):
            for ix in range(spec.nx):
                cx, cy = spec.cell_center(ix, iy)
                name, status = semantic_label_at(cx, cy, semantic, calib=calib, k=k)
                if status == "ok" and name in allowed:
                    admissible[iy, ix] = True
    n = int(admissible.sum())
    prob = np.zeros((spec.ny, spec.nx), dtype=np.float64)
    if n:
        prob[admissible] = 1.0 / n
    return OccupancyGrid(spec, prob)


def pillarize(cloud: PointCloud, spec: BevGridSpec) -> PillarGrid:
    """Group points into vertical BEV pillars and augment each with offsets
    to the pillar's point mean (x_c, y_c, z_c) and to the pillar center
    (x_p, y_p). Points outside the grid are dropped and counted."""
    if len(cloud) == 0:
        return PillarGrid(spec.x_min, spec.y_min, spec.cell_size, spec.nx, spec.ny, {}, 0)
    pts = cloud.data.astype(np.float64)
    ix = np.floor((pts[:, 0] - spec.x_min) / spec.cell_size).astype(np.int64)
    iy = np.floor((pts[:, 1] - spec.y_min) / spec.cell_size).astype(np.int64)
    keep = (ix >= 0) & (ix < spec.nx) & (iy >= 0) & (iy < spec.ny)
    dropped = int((~keep).sum())
    pillars = {}
    flat = iy[keep] * spec.nx + ix[keep]
    kept = pts[keep]
    for key in np.unique(flat):
        sel = kept[flat == key]
        gy, gx = divmod(int(key), spec.nx)
        mean = sel[:, :3].mean(axis=0)
        center_x = spec.x_min + (gx + 0.5) * spec.cell_size
        center_y = spec.y_min + (gy + 0.5) * spec.cell_size
        feats = np.empty((sel.shape[0], 9))
        feats[:, :4] = sel
        feats[:, 4:7] = sel[:, :3] - mean
        feats[:, 7] = sel[:, 0] - center_x
        feats[:, 8] = sel[:, 1] - center_y
        pillars[(gx, gy)] = feats.astype(np.float32)
    return PillarGrid(spec.x_min, spec.y_min, spec.cell_size, spec.nx, spec.ny, pillars, dropped)


def box_camera_to_lidar(
    h: float,
    w: float,
    l: float,
    x: float,
    y: float,
    z: float,
    rotation_y: float,
    calib: Calibration,
    class_id: int = 0,
) -> Box3D:
    """Camera-frame labeled box (bottom-center convention, rotation about the
    camera y axis) -> LiDAR-frame Box3D with geometric center."""
    inv = calib.camera_to_lidar
    bottom = inv[:3, :3] @ np.array([x, y, z], dtype=np.float64) + inv[:3, 3]
    heading_cam = np.array([math.cos(rotation_y), 0.0, -math.sin(rotation_y)])
    heading = calib.lidar_to_camera[:3, :3].T @ heading_cam
    yaw = math.atan2(heading[1], heading[0])
    return Box3D(
        float(bottom[0]),
        float(bottom[1]),
        float(bottom[2]) + h / 2.0,
        l,
        w,
        h,
        yaw,
        class_id,
    )


def box_lidar_to_camera(box: Box3D, calib: Calibration):
    """Inverse of box_camera_to_lidar: returns (h, w, l, x, y, z, rotation_y)."""
    bottom = box.center - np.array([0.0, 0.0, box.h / 2.0])
    t = calib.lidar_to_camera
    cam = t[:3, :3] @ bottom + t[:3, 3]
    heading = t[:3, :3] @ np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
    rotation_y = wrap_yaw(math.atan2(-heading[2], heading[0]))
    return box.h, box.w, box.l, float(cam[0]), float(cam[1]), float(cam[2]), rotation_y

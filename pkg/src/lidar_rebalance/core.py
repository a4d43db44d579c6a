"""Domain types shared by all modules, plus the class catalog.

The catalog carries the class -> semantic-label association table used by
contextual sampling (e.g. KITTI pedestrians go with "sidewalk", cyclists
with "sidewalk" or "road"), per-frame sampling targets, and the minimum
point count below which a ground-truth object is too sparse to reuse.

Everything here is immutable after construction and safe to share
read-only across parallel workers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import CatalogLookupError, ValidationError

__all__ = [
    "normalize_semantic_name",
    "ClassCatalog",
    "Point",
    "PointCloud",
    "Box3D",
    "Calibration",
    "SemanticImageMap",
    "SemanticPointMap",
]

TWO_PI = 2.0 * math.pi


def normalize_semantic_name(name: str) -> str:
    """Canonical form for semantic label matching: trimmed, case-folded."""
    return name.strip().casefold()


def wrap_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    y = math.fmod(yaw, TWO_PI)
    if y <= -math.pi:
        y += TWO_PI
    elif y > math.pi:
        y -= TWO_PI
    return y


def _frozen_array(values, dtype, shape=None) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"expected array of shape {shape}, got {arr.shape}")
    if arr.base is not None or arr.flags.writeable:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class registry with sampling targets and semantic associations.

    ``classes`` maps dense ids 0..N-1 to unique names. ``associations``
    values are stored normalized (trimmed, case-folded) because the source
    vocabularies mix capitalization across datasets.
    """

    classes: tuple  # tuple of (class_id, name)
    targets: Mapping[int, int]
    associations: Mapping[int, frozenset]
    min_points: Mapping[int, int]

    def __post_init__(self):
        ids = [cid for cid, _ in self.classes]
        names = [name for _, name in self.classes]
        if ids != list(range(len(ids))):
            raise ValidationError(f"class ids must be dense 0..{len(ids) - 1}, got {ids}")
        if len(set(names)) != len(names):
            raise ValidationError(f"class names must be unique, got {names}")
        known = set(ids)
        for label, mapping in (("targets", self.targets),
                               ("associations", self.associations),
                               ("min_points", self.min_points)):
            extra = set(mapping) - known
            if extra:
                raise ValidationError(f"{label} references unknown class ids {sorted(extra)}")
        for cid, n in self.targets.items():
            if n < 0:
                raise ValidationError(f"target for class {cid} must be >= 0, got {n}")
        for cid, n in self.min_points.items():
            if n < 0:
                raise ValidationError(f"min_points for class {cid} must be >= 0, got {n}")
        for cid in ids:
            if self.targets.get(cid, 0) > 0 and not self.associations.get(cid):
                raise ValidationError(
                    f"class {self.name_of(cid)!r} has a positive sampling target "
                    "but no associated semantic labels"
                )

    @classmethod
    def build(
        cls,
        names: Sequence[str],
        targets: Mapping[str, int],
        associations: Mapping[str, Iterable[str]],
        min_points: Optional[Mapping[str, int]] = None,
        default_min_points: int = 5,
    ) -> "ClassCatalog":
        """Construct from name-keyed mappings, assigning dense ids in order."""
        ids = {name: i for i, name in enumerate(names)}
        for label, mapping in (("targets", targets), ("associations", associations),
                               ("min_points", min_points or {})):
            unknown = set(mapping) - set(ids)
            if unknown:
                raise ValidationError(f"{label} references unknown classes {sorted(unknown)}")
        return cls(
            classes=tuple((i, name) for name, i in ids.items()),
            targets={ids[n]: int(v) for n, v in targets.items()},
            associations={
                ids[n]: frozenset(normalize_semantic_name(s) for s in labels)
                for n, labels in associations.items()
            },
            min_points={
                ids[n]: int((min_points or {}).get(n, default_min_points)) for n in names
            },
        )

    @property
    def class_ids(self) -> tuple:
        return tuple(cid for cid, _ in self.classes)

    def name_of(self, class_id: int) -> str:
        for cid, name in self.classes:
            if cid == class_id:
                return name
        raise CatalogLookupError(f"unknown class id {class_id}")

    def id_of(self, name: str) -> int:
        for cid, cname in self.classes:
            if cname == name:
                return cid
        raise CatalogLookupError(f"unknown class name {name!r}")

    def has_class(self, name: str) -> bool:
        return any(cname == name for _, cname in self.classes)

    def target(self, class_id: int) -> int:
        self.name_of(class_id)
        return int(self.targets.get(class_id, 0))

    def min_points_of(self, class_id: int) -> int:
        self.name_of(class_id)
        return int(self.min_points.get(class_id, 0))

    def associated_labels(self, class_id: int) -> frozenset:
        """Normalized semantic names admissible for ``class_id`` placements."""
        self.name_of(class_id)  # raises for unknown ids
        return self.associations.get(class_id, frozenset())

    def to_json(self) -> str:
        """Canonical serialized form; byte-stable for hashing and round-trips."""
        payload = {
            "classes": [[cid, name] for cid, name in self.classes],
            "targets": {str(k): v for k, v in sorted(self.targets.items())},
            "associations": {
                str(k): sorted(v) for k, v in sorted(self.associations.items())
            },
            "min_points": {str(k): v for k, v in sorted(self.min_points.items())},
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ClassCatalog":
        raw = json.loads(text)
        return cls(
            classes=tuple((int(cid), name) for cid, name in raw["classes"]),
            targets={int(k): int(v) for k, v in raw["targets"].items()},
            associations={
                int(k): frozenset(v) for k, v in raw["associations"].items()
            },
            min_points={int(k): int(v) for k, v in raw["min_points"].items()},
        )


def associated_labels(catalog: ClassCatalog, class_id: int) -> frozenset:
    """Module-level alias for :meth:`ClassCatalog.associated_labels`."""
    return catalog.associated_labels(class_id)


@dataclass(frozen=True)
class Point:
    """One LiDAR return: sensor-frame meters plus unitless reflectance."""

    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValidationError(f"point coordinates must be finite, got {self}")

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class PointCloud:
    """Order-preserving (N, 4) collection of x, y, z, intensity rows.

    Stored as float32 to match the on-disk sensor format; may be empty.
    """

    data: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValidationError(f"point cloud must be (N, 4), got shape {arr.shape}")
        if not np.all(np.isfinite(arr[:, :3])):
            raise ValidationError("point cloud coordinates must be finite")
        if arr.base is not None or arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def empty(cls, frame_id: str = "") -> "PointCloud":
        return cls(np.zeros((0, 4), dtype=np.float32), frame_id)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, 3]

    def point(self, i: int) -> Point:
        x, y, z, r = (float(v) for v in self.data[i])
        return Point(x, y, z, r)


@dataclass(frozen=True)
class Box3D:
    """7-DOF oriented box: geometric center, dimensions, yaw about +z.

    ``l`` runs along the heading axis, ``w`` across it, ``h`` vertically.
    Yaw is normalized into (-pi, pi] at construction.
    """

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float
    class_id: int = 0

    def __post_init__(self):
        for name in ("cx", "cy", "cz", "l", "w", "h", "yaw"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"box field {name} must be finite, got {v}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValidationError(
                f"box dimensions must be positive, got l={self.l} w={self.w} h={self.h}"
            )
        object.__setattr__(self, "yaw", wrap_yaw(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz], dtype=np.float64)

    def at_pose(self, x: float, y: float, z: float, yaw: float) -> "Box3D":
        return Box3D(x, y, z, self.l, self.w, self.h, yaw, self.class_id)


@dataclass(frozen=True)
class Calibration:
    """Pinhole camera intrinsics plus the rigid LiDAR-to-camera transform."""

    intrinsic: np.ndarray       # 3x3, pixels
    lidar_to_camera: np.ndarray  # 4x4 rigid transform, meters
    image_width: int
    image_height: int

    def __post_init__(self):
        k = _frozen_array(self.intrinsic, np.float64, (3, 3))
        t = _frozen_array(self.lidar_to_camera, np.float64, (4, 4))
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(t))):
            raise ValidationError("calibration matrices must be finite")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValidationError(f"focal lengths must be positive, got {k[0, 0]}, {k[1, 1]}")
        r = t[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise ValidationError("lidar_to_camera rotation block is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValidationError("lidar_to_camera rotation must have determinant +1")
        if np.max(np.abs(t[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise ValidationError("lidar_to_camera bottom row must be [0, 0, 0, 1]")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValidationError("image dimensions must be positive")
        object.__setattr__(self, "intrinsic", k)
        object.__setattr__(self, "lidar_to_camera", t)

    @cached_property
    def camera_to_lidar(self) -> np.ndarray:
        r = self.lidar_to_camera[:3, :3]
        t = self.lidar_to_camera[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        inv.flags.writeable = False
        return inv


def _validated_legend(legend: Mapping[int, str], used_ids) -> dict:
    legend = {int(k): str(v) for k, v in legend.items()}
    missing = sorted(set(int(i) for i in used_ids) - set(legend))
    if missing:
        raise ValidationError(f"label ids {missing} have no legend entry")
    return legend


@dataclass(frozen=True)
class SemanticImageMap:
    """Row-major grid of semantic label ids over the camera image plane."""

    width: int
    height: int
    labels: np.ndarray  # (height, width) small ints
    legend: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim == 1:
            if arr.size != self.width * self.height:
                raise ValidationError(
                    f"label grid has {arr.size} entries, expected "
                    f"{self.width}x{self.height}={self.width * self.height}"
                )
            arr = arr.reshape(self.height, self.width)
        elif arr.shape != (self.height, self.width):
            raise ValidationError(
                f"label grid shape {arr.shape} does not match "
                f"(height, width)=({self.height}, {self.width})"
            )
        arr = _frozen_array(arr, np.uint8)
        object.__setattr__(self, "labels", arr)
        ids = np.unique(arr) if arr.size else []
        object.__setattr__(self, "legend", _validated_legend(self.legend, ids))

    @cached_property
    def normalized_legend(self) -> dict:
        return {i: normalize_semantic_name(n) for i, n in self.legend.items()}

    def label_name_at(self, u: float, v: float) -> str:
        """Normalized semantic name of the pixel containing (u, v)."""
        col = int(math.floor(u))
        row = int(math.floor(v))
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValidationError(f"pixel ({u}, {v}) outside {self.width}x{self.height} map")
        return self.normalized_legend[int(self.labels[row, col])]


@dataclass(frozen=True)
class SemanticPointMap:
    """Sparse labeled 3D points, the LiDAR-segmentation alternative to image maps."""

    xyz: np.ndarray     # (M, 3) meters
    labels: np.ndarray  # (M,) small ints
    legend: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        xyz = _frozen_array(np.atleast_2d(self.xyz), np.float64)
        if xyz.size == 0:
            raise ValidationError("semantic point map must be non-empty")
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValidationError(f"semantic points must be (M, 3), got {xyz.shape}")
        labels = _frozen_array(self.labels, np.int64)
        if labels.shape != (xyz.shape[0],):
            raise ValidationError("one label per semantic point required")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "legend", _validated_legend(self.legend, np.unique(labels)))

    @cached_property
    def normalized_legend(self) -> dict:
        return {i: normalize_semantic_name(n) for i, n in self.legend.items()}

    @cached_property
    def kdtree(self):
        from scipy.spatial import cKDTree

        return cKDTree(self.xyz)


SemanticSource = Union[SemanticImageMap, SemanticPointMap]

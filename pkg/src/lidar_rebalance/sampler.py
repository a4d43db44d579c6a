"""Contextual ground-truth sampling: propose placements for database
records, filter them by semantic context and collision, and merge the
survivors into the frame.

Three modes are provided because filtering donor poses and resampling
positions from a semantic occupancy grid are both defensible readings of
contextual sampling:

* ``conventional``        - donor poses, collision filter only (the baseline)
* ``contextual-filter``   - donor poses, semantic filter then collision filter
* ``contextual-resample`` - poses drawn from the class occupancy grid,
                            then the same two filters

``augment_frame`` is pure given its random source; frames can be processed
in parallel with per-frame generators derived from (global seed, frame id).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .core import Box3D, ClassCatalog, PointCloud
from .errors import ConfigurationError, ValidationError
from .geometry import BevGridSpec, bev_iou, occupancy_grid, points_in_obb, semantic_label_at
from .gtdb import GtDatabase, GtRecord, query
from .ingest import FrameBundle

__all__ = [
    "MODE_CONVENTIONAL",
    "MODE_CONTEXTUAL_FILTER",
    "MODE_CONTEXTUAL_RESAMPLE",
    "SAMPLER_MODES",
    "PROPOSE_KEEP_DONOR",
    "PROPOSE_OCCUPANCY",
    "REJECT_NON_ASSOCIATED",
    "REJECT_COLLISION",
    "REJECT_OFF_MAP",
    "REJECT_BEHIND_CAMERA",
    "Pose",
    "Placement",
    "ClassAudit",
    "FrameAudit",
    "AugmentedFrame",
    "SamplerConfig",
    "audit_payload",
    "frame_rng",
    "propose_placements",
    "semantic_filter",
    "collision_filter",
    "augment_frame",
]

MODE_CONVENTIONAL = "conventional"
MODE_CONTEXTUAL_FILTER = "contextual-filter"
MODE_CONTEXTUAL_RESAMPLE = "contextual-resample"
SAMPLER_MODES = (MODE_CONVENTIONAL, MODE_CONTEXTUAL_FILTER, MODE_CONTEXTUAL_RESAMPLE)

PROPOSE_KEEP_DONOR = "keep-donor-pose"
PROPOSE_OCCUPANCY = "occupancy-sample"

REJECT_NON_ASSOCIATED = "non-associated-region"
REJECT_COLLISION = "collision"
REJECT_OFF_MAP = "off-map"
REJECT_BEHIND_CAMERA = "behind-camera"
REJECTION_REASONS = (
    REJECT_NON_ASSOCIATED,
    REJECT_COLLISION,
    REJECT_OFF_MAP,
    REJECT_BEHIND_CAMERA,
)


class Pose(NamedTuple):
    x: float
    y: float
    z: float
    yaw: float


@dataclass(frozen=True)
class Placement:
    """One record's placement attempt and its verdict."""

    record_uid: str
    class_id: int
    pose: Pose
    provenance: str  # proposal mode
    verdict: str     # "accepted" | "rejected"
    reason: Optional[str] = None

    def __post_init__(self):
        if self.verdict == "accepted":
            if self.reason is not None:
                raise ValidationError("accepted placements carry no rejection reason")
        elif self.verdict == "rejected":
            if self.reason not in REJECTION_REASONS:
                raise ValidationError(f"unknown rejection reason {self.reason!r}")
        else:
            raise ValidationError(f"verdict must be accepted/rejected, got {self.verdict!r}")


@dataclass
class ClassAudit:
    drawn: int = 0
    proposals: int = 0
    accepted: int = 0
    rejections: Dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str):
        self.rejections[reason] = self.rejections.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {
            "drawn": self.drawn,
            "proposals": self.proposals,
            "accepted": self.accepted,
            "rejections": {r: self.rejections[r] for r in sorted(self.rejections)},
        }


@dataclass
class FrameAudit:
    frame_id: str
    mode: str
    per_class: Dict[int, ClassAudit] = field(default_factory=dict)
    removed_points: int = 0

    def for_class(self, class_id: int) -> ClassAudit:
        return self.per_class.setdefault(class_id, ClassAudit())

    def to_dict(self, catalog: Optional[ClassCatalog] = None) -> dict:
        name = (lambda c: catalog.name_of(c)) if catalog is not None else str
        return {
            "frame_id": self.frame_id,
            "mode": self.mode,
            "removed_points": self.removed_points,
            "per_class": {name(c): a.to_dict() for c, a in sorted(self.per_class.items())},
        }

    def to_json(self, catalog: Optional[ClassCatalog] = None) -> str:
        return json.dumps(self.to_dict(catalog), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class AugmentedFrame:
    """Merged cloud and box set, the accepted placements, and the audit."""

    cloud: PointCloud
    boxes: Tuple[Box3D, ...]
    inserted: Tuple[Placement, ...]
    audit: FrameAudit

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "inserted", tuple(self.inserted))
        if any(p.verdict != "accepted" for p in self.inserted):
            raise ValidationError("inserted placements must all be accepted")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = MODE_CONTEXTUAL_FILTER
    collision_iou: float = 0.0      # max tolerated pairwise BEV IoU
    knn_k: int = 5                  # point-map classifier neighborhood
    retry_budget: int = 10          # occupancy-mode candidate poses per record
    permissive_off_map: bool = False
    grid: Optional[BevGridSpec] = None  # required for contextual-resample

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ValidationError(f"mode must be one of {SAMPLER_MODES}, got {self.mode!r}")
        if not 0.0 <= self.collision_iou <= 1.0:
            raise ValidationError(f"collision_iou must be in [0, 1], got {self.collision_iou}")
        if self.knn_k < 1:
            raise ValidationError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.retry_budget < 1:
            raise ValidationError(f"retry_budget must be >= 1, got {self.retry_budget}")

    @property
    def proposal_mode(self) -> str:
        return PROPOSE_OCCUPANCY if self.mode == MODE_CONTEXTUAL_RESAMPLE else PROPOSE_KEEP_DONOR

    @property
    def semantic_enabled(self) -> bool:
        return self.mode != MODE_CONVENTIONAL


def audit_payload(result: "AugmentedFrame", catalog: ClassCatalog) -> dict:
    """JSON-ready per-frame audit, inserted-object provenance included.

    Shared by every output path so audits compare bit-identically across
    them.
    """
    payload = result.audit.to_dict(catalog)
    payload["inserted"] = [
        {
            "record_uid": p.record_uid,
            "class": catalog.name_of(p.class_id),
            "pose": list(p.pose),
            "provenance": p.provenance,
        }
        for p in result.inserted
    ]
    return payload


def frame_rng(global_seed: int, frame_id: str) -> np.random.Generator:
    """Independent per-frame generator derived from (global seed, frame id).

    Uses a stable digest of the frame id, so the stream does not depend on
    process hash randomization or frame visiting order.
    """
    digest = hashlib.sha256(frame_id.encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(global_seed) & 0xFFFFFFFF, *words]))


def propose_placements(
    record: GtRecord,
    frame: FrameBundle,
    mode: str,
    rng: np.random.Generator,
    catalog: ClassCatalog,
    config: SamplerConfig,
) -> List[Pose]:
    """Candidate poses for one record.

    Donor mode emits the record's original pose. Occupancy mode draws up to
    the retry budget of BEV cells from the class occupancy grid (uniform
    over admissible cells), placing the box at the cell center with a
    uniform random yaw; the donor's ground height is kept because the
    semantic anchor is the only thing the ground projection is for.
    """
    if mode == PROPOSE_KEEP_DONOR:
        return [Pose(*record.source_pose)]
    if mode != PROPOSE_OCCUPANCY:
        raise ValidationError(f"unknown proposal mode {mode!r}")
    if frame.semantic is None:
        raise ConfigurationError(f"frame {frame.frame_id} has no semantic source")
    if config.grid is None:
        raise ConfigurationError("occupancy sampling requires a BEV grid spec")
    grid = occupancy_grid(
        frame.semantic, record.class_id, catalog, config.grid, calib=frame.calib, k=config.knn_k
    )
    if grid.is_zero:
        return []
    donor_z = record.source_pose[2]
    poses = []
    for _ in range(config.retry_budget):
        cell = grid.sample_cell(rng)
        x, y = config.grid.cell_center(*cell)
        yaw = float(rng.uniform(-math.pi, math.pi))
        poses.append(Pose(x, y, donor_z, yaw))
    return poses


def semantic_filter(
    pose: Pose,
    class_id: int,
    frame: FrameBundle,
    catalog: ClassCatalog,
    k: int = 5,
    permissive_off_map: bool = False,
) -> Optional[str]:
    """None to accept, else the rejection reason.

    The posed box's ground anchor (x, y, 0) is classified through the
    frame's semantic source; the label must be associated with the class.
    Anchors the camera cannot see reject by default (unknown context is not
    admissible); the permissive flag accepts them to emulate frames with no
    usable camera coverage.
    """
    if frame.semantic is None:
        raise ConfigurationError(f"frame {frame.frame_id} has no semantic source")
    name, status = semantic_label_at(pose.x, pose.y, frame.semantic, calib=frame.calib, k=k)
    if status == "behind-camera":
        return None if permissive_off_map else REJECT_BEHIND_CAMERA
    if status == "off-map":
        return None if permissive_off_map else REJECT_OFF_MAP
    if name in catalog.associated_labels(class_id):
        return None
    return REJECT_NON_ASSOCIATED


def collision_filter(
    pose: Pose,
    dims: Tuple[float, float, float],
    class_id: int,
    existing: Sequence[Box3D],
    collision_iou: float = 0.0,
) -> Optional[str]:
    """None to accept, else "collision".

    Accepts iff the candidate footprint's BEV IoU against every existing
    box (originals and already-accepted insertions alike) stays at or below
    the threshold; the default 0 rejects any overlap.
    """
    l, w, h = dims
    candidate = Box3D(pose.x, pose.y, pose.z, l, w, h, pose.yaw, class_id)
    reach = math.hypot(l, w) / 2.0
    for other in existing:
        # cheap circumradius gate before exact polygon clipping
        if math.hypot(other.cx - pose.x, other.cy - pose.y) > reach + math.hypot(other.l, other.w) / 2.0:
            continue
        if bev_iou(candidate, other) > collision_iou:
            return REJECT_COLLISION
    return None


def augment_frame(
    frame: FrameBundle,
    db: GtDatabase,
    catalog: ClassCatalog,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> AugmentedFrame:
    """Draw per-class records, place the ones that survive filtering, and
    merge their points into the frame.

    Original cloud points falling inside an inserted box are deleted before
    concatenation so pasted objects do not interpenetrate scene geometry.
    Deterministic for a fixed generator state.
    """
    if config.semantic_enabled and frame.semantic is None:
        raise ConfigurationError(
            f"frame {frame.frame_id} has no semantic source but mode {config.mode} needs one"
        )
    unknown = set(db.records) - set(catalog.class_ids)
    if unknown:
        raise ValidationError(f"database classes {sorted(unknown)} missing from catalog")

    audit = FrameAudit(frame_id=frame.frame_id, mode=config.mode)
    obstacles: List[Box3D] = list(frame.boxes)
    accepted: List[Tuple[GtRecord, Placement]] = []

    for class_id in catalog.class_ids:
        target = catalog.target(class_id)
        if target == 0 or class_id not in db.records:
            continue
        drawn = query(db, class_id, target, rng)
        cls_audit = audit.for_class(class_id)
        cls_audit.drawn += len(drawn)
        for record in drawn:
            poses = propose_placements(
                record, frame, config.proposal_mode, rng, catalog, config
            )
            if not poses:
                cls_audit.reject(REJECT_OFF_MAP)  # no admissible cell anywhere
                continue
            placed = None
            for pose in poses:
                cls_audit.proposals += 1
                if config.semantic_enabled:
                    reason = semantic_filter(
                        pose,
                        class_id,
                        frame,
                        catalog,
                        k=config.knn_k,
                        permissive_off_map=config.permissive_off_map,
                    )
                    if reason is not None:
                        cls_audit.reject(reason)
                        continue
                reason = collision_filter(
                    pose, record.dims, class_id, obstacles, config.collision_iou
                )
                if reason is not None:
                    cls_audit.reject(reason)
                    continue
                placed = Placement(
                    record_uid=record.uid,
                    class_id=class_id,
                    pose=pose,
                    provenance=config.proposal_mode,
                    verdict="accepted",
                )
                break
            if placed is not None:
                cls_audit.accepted += 1
                obstacles.append(record.box_at(*placed.pose))
                accepted.append((record, placed))

    if not accepted:
        return AugmentedFrame(frame.cloud, frame.boxes, (), audit)

    inserted_boxes = [rec.box_at(*pl.pose) for rec, pl in accepted]
    keep = np.ones(len(frame.cloud), dtype=bool)
    if len(frame.cloud):
        xyz = frame.cloud.xyz.astype(np.float64)
        for box in inserted_boxes:
            keep &= ~points_in_obb(xyz, box)
    audit.removed_points = int((~keep).sum())

    parts = [frame.cloud.data[keep]]
    parts.extend(rec.points_at(*pl.pose) for rec, pl in accepted)
    merged = PointCloud(np.concatenate(parts, axis=0), frame.frame_id)
    return AugmentedFrame(
        cloud=merged,
        boxes=tuple(frame.boxes) + tuple(inserted_boxes),
        inserted=tuple(pl for _, pl in accepted),
        audit=audit,
    )

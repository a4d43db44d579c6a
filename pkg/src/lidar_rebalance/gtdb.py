"""Offline ground-truth object database: build, persist, query.

Each labeled box with enough interior points becomes one record whose
points are re-expressed in the box frame (translate by -center, rotate by
-yaw), so pasting at a new pose is a single rigid transform. The on-disk
layout is an ``index.jsonl`` of per-record metadata, an append-only
``points.blob`` of little-endian float32 point data, and a ``meta.json``
carrying version, catalog hash, per-class counts, and content checksums.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .core import Box3D, ClassCatalog, PointCloud
from .errors import CatalogLookupError, DataIOError, FormatError, ValidationError
from .geometry import points_in_obb

__all__ = ["GtRecord", "GtDatabase", "build_database", "save", "load", "query"]

DB_VERSION = 1
INDEX_FILE = "index.jsonl"
BLOB_FILE = "points.blob"
META_FILE = "meta.json"

# float32 blob storage can push an exact-boundary point a rounding step
# outside the canonical box; revalidation allows for that
LOCAL_FRAME_EPS = 1e-4


@dataclass(frozen=True)
class GtRecord:
    """One stored object: canonical-frame box dims plus box-local points.

    ``source_pose`` preserves the donor's original (x, y, z, yaw) so
    sampling can either reuse it or only borrow its ground height.
    """

    uid: str
    class_id: int
    dims: Tuple[float, float, float]  # (l, w, h)
    points: PointCloud                 # box-local coordinates
    source_frame: str
    source_pose: Tuple[float, float, float, float]  # (x, y, z, yaw)

    def __post_init__(self):
        l, w, h = self.dims
        if l <= 0 or w <= 0 or h <= 0:
            raise ValidationError(f"record dims must be positive, got {self.dims}")
        local = self.points.xyz
        half = np.array([l / 2.0, w / 2.0, h / 2.0]) + LOCAL_FRAME_EPS
        if local.shape[0] and np.any(np.abs(local) > half):
            raise ValidationError(
                f"record {self.uid}: stored points fall outside the canonical box"
            )

    @property
    def num_points(self) -> int:
        return len(self.points)

    def canonical_box(self) -> Box3D:
        l, w, h = self.dims
        return Box3D(0.0, 0.0, 0.0, l, w, h, 0.0, self.class_id)

    def box_at(self, x: float, y: float, z: float, yaw: float) -> Box3D:
        l, w, h = self.dims
        return Box3D(x, y, z, l, w, h, yaw, self.class_id)

    def points_at(self, x: float, y: float, z: float, yaw: float) -> np.ndarray:
        """Box-local points transformed to a world pose, as (N, 4) float64.

        Kept in double precision so paste-back fidelity is limited only by
        the float32 blob storage of the local coordinates.
        """
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        world = self.points.xyz.astype(np.float64) @ rot.T + np.array([x, y, z])
        out = np.empty((len(self.points), 4), dtype=np.float64)
        out[:, :3] = world
        out[:, 3] = self.points.intensity
        return out


@dataclass(frozen=True)
class GtDatabase:
    """Records grouped by class id, plus index metadata."""

    records: Mapping[int, Tuple[GtRecord, ...]]
    catalog_hash: str
    skipped: Mapping[int, int] = field(default_factory=dict)
    source_frames: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "records", {int(c): tuple(rs) for c, rs in sorted(self.records.items())}
        )

    @property
    def counts(self) -> Dict[int, int]:
        return {cid: len(rs) for cid, rs in self.records.items()}

    def total_records(self) -> int:
        return sum(len(rs) for rs in self.records.values())


def catalog_hash(catalog: ClassCatalog) -> str:
    return hashlib.sha256(catalog.to_json().encode()).hexdigest()


def build_database(frames: Iterable, catalog: ClassCatalog) -> GtDatabase:
    """Collect every labeled box's interior points (box-local) into records.

    Boxes with fewer than the catalog's per-class minimum points are
    skipped and counted; they make useless augmentations.
    """
    records: Dict[int, List[GtRecord]] = {cid: [] for cid in catalog.class_ids}
    skipped: Dict[int, int] = {cid: 0 for cid in catalog.class_ids}
    n_frames = 0
    for frame in frames:
        n_frames += 1
        xyz = frame.cloud.xyz.astype(np.float64)
        for i, box in enumerate(frame.boxes):
            if box.class_id not in records:
                raise CatalogLookupError(f"frame {frame.frame_id}: unknown class {box.class_id}")
            mask = points_in_obb(xyz, box) if len(frame.cloud) else np.zeros(0, dtype=bool)
            n = int(mask.sum())
            if n < catalog.min_points_of(box.class_id):
                skipped[box.class_id] += 1
                continue
            c, s = math.cos(-box.yaw), math.sin(-box.yaw)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            local = np.empty((n, 4), dtype=np.float32)
            local[:, :3] = (xyz[mask] - box.center) @ rot.T
            local[:, 3] = frame.cloud.intensity[mask]
            records[box.class_id].append(
                GtRecord(
                    uid=f"{frame.frame_id}#{i}",
                    class_id=box.class_id,
                    dims=(box.l, box.w, box.h),
                    points=PointCloud(local),
                    source_frame=frame.frame_id,
                    source_pose=(box.cx, box.cy, box.cz, box.yaw),
                )
            )
    return GtDatabase(
        records=records,
        catalog_hash=catalog_hash(catalog),
        skipped=skipped,
        source_frames=n_frames,
    )


def _index_line(rec: GtRecord, offset: int, length: int) -> str:
    return json.dumps(
        {
            "uid": rec.uid,
            "class_id": rec.class_id,
            "dims": list(rec.dims),
            "source_frame": rec.source_frame,
            "source_pose": list(rec.source_pose),
            "num_points": rec.num_points,
            "offset": offset,
            "length": length,
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def save(db: GtDatabase, path) -> None:
    """Write the database directory; serialization is canonical so identical
    databases produce byte-identical files."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        blob = bytearray()
        index_lines = []
        for cid in sorted(db.records):
            for rec in db.records[cid]:
                payload = np.ascontiguousarray(rec.points.data, dtype="<f4").tobytes()
                index_lines.append(_index_line(rec, len(blob), len(payload)))
                blob += payload
        index_text = "".join(line + "\n" for line in index_lines)
        meta = {
            "version": DB_VERSION,
            "catalog_hash": db.catalog_hash,
            "counts": {str(c): n for c, n in sorted(db.counts.items())},
            "skipped": {str(c): n for c, n in sorted(db.skipped.items())},
            "source_frames": db.source_frames,
            "blob_sha256": hashlib.sha256(bytes(blob)).hexdigest(),
            "index_sha256": hashlib.sha256(index_text.encode()).hexdigest(),
        }
        (root / INDEX_FILE).write_bytes(index_text.encode())
        (root / BLOB_FILE).write_bytes(bytes(blob))
        (root / META_FILE).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write database to {root}: {exc}") from exc


def load(path) -> GtDatabase:
    """Read a database directory, verifying version and content checksums;
    every record re-validates its point-in-box invariant."""
    root = Path(path)
    try:
        meta = json.loads((root / META_FILE).read_text())
        index_text = (root / INDEX_FILE).read_text()
        blob = (root / BLOB_FILE).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read database from {root}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt {META_FILE}: {exc}", path=root / META_FILE) from None

    if meta.get("version") != DB_VERSION:
        raise FormatError(
            f"database version {meta.get('version')} unsupported (expected {DB_VERSION})",
            path=root / META_FILE,
        )
    if hashlib.sha256(blob).hexdigest() != meta.get("blob_sha256"):
        raise FormatError(f"{BLOB_FILE} checksum mismatch", path=root / BLOB_FILE)
    if hashlib.sha256(index_text.encode()).hexdigest() != meta.get("index_sha256"):
        raise FormatError(f"{INDEX_FILE} checksum mismatch", path=root / INDEX_FILE)

    records: Dict[int, List[GtRecord]] = {int(c): [] for c in meta.get("counts", {})}
    for lineno, line in enumerate(index_text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            offset, length = entry["offset"], entry["length"]
            payload = blob[offset : offset + length]
            if len(payload) != length or length % 16 != 0:
                raise FormatError(
                    f"record blob slice [{offset}:{offset + length}] out of bounds",
                    path=root / INDEX_FILE,
                    line=lineno,
                )
            pts = np.frombuffer(payload, dtype="<f4").reshape(-1, 4)
            if pts.shape[0] != entry["num_points"]:
                raise FormatError(
                    f"record {entry['uid']} stores {pts.shape[0]} points, "
                    f"index claims {entry['num_points']}",
                    path=root / INDEX_FILE,
                    line=lineno,
                )
            rec = GtRecord(
                uid=entry["uid"],
                class_id=int(entry["class_id"]),
                dims=tuple(entry["dims"]),
                points=PointCloud(pts),
                source_frame=entry["source_frame"],
                source_pose=tuple(entry["source_pose"]),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt index entry: {exc}", path=root / INDEX_FILE, line=lineno) from None
        records.setdefault(rec.class_id, []).append(rec)

    counts = {int(c): n for c, n in meta.get("counts", {}).items()}
    actual = {c: len(rs) for c, rs in records.items()}
    if counts != actual:
        raise FormatError(
            f"index counts {actual} disagree with metadata {counts}", path=root / META_FILE
        )
    return GtDatabase(
        records=records,
        catalog_hash=meta["catalog_hash"],
        skipped={int(c): n for c, n in meta.get("skipped", {}).items()},
        source_frames=int(meta.get("source_frames", 0)),
    )


def query(
    db: GtDatabase, class_id: int, n: int, rng: np.random.Generator
) -> List[GtRecord]:
    """Sample n records of one class uniformly without replacement.

    Returns the whole class when n exceeds the supply; deterministic for a
    fixed generator state.
    """
    if n < 0:
        raise ValidationError(f"sample size must be >= 0, got {n}")
    if class_id not in db.records:
        raise CatalogLookupError(f"database has no class {class_id}")
    pool = db.records[class_id]
    if n == 0 or not pool:
        return []
    take = min(n, len(pool))
    idx = rng.choice(len(pool), size=take, replace=False)
    return [pool[int(i)] for i in idx]

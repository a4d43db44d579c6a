"""Buffer-level adapters over the core package.

Point clouds travel as (N, 4) float rows (x, y, z, intensity), boxes as
(M, 8) float rows (cx, cy, cz, l, w, h, yaw, class_id). Buffers are taken
by reference where the host permits (read-only float32 input is not
copied); everything else is validated and copied once.
"""
from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from lidar_rebalance.balance import DwaConfig, DwaScheduler as _CoreScheduler
from lidar_rebalance.config import ProjectConfig, load_project_config
from lidar_rebalance.core import Box3D, Calibration, PointCloud, SemanticSource
from lidar_rebalance.errors import ValidationError
from lidar_rebalance.gtdb import GtDatabase, load as load_database
from lidar_rebalance.ingest import FrameBundle
from lidar_rebalance.sampler import audit_payload, augment_frame as _augment, frame_rng

__all__ = ["ArrayView", "ConfigHandle", "DwaScheduler", "augment_frame", "load_config"]

BOX_FIELDS = 8  # cx cy cz l w h yaw class_id


class ArrayView:
    """Validated view of a contiguous N x 4 point buffer."""

    def __init__(self, buffer):
        arr = np.asarray(buffer)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValidationError(
                f"point buffer must be (N, 4) rows of x, y, z, intensity, got shape {arr.shape}"
            )
        if arr.dtype.kind not in "fiu":
            raise ValidationError(f"point buffer must be numeric, got dtype {arr.dtype}")
        self.array = arr

    def __len__(self) -> int:
        return self.array.shape[0]

    def to_cloud(self, frame_id: str) -> PointCloud:
        return PointCloud(self.array, frame_id)


def _boxes_from_buffer(buffer) -> Tuple[Box3D, ...]:
    arr = np.asarray(buffer, dtype=np.float64)
    if arr.size == 0:
        return ()
    if arr.ndim != 2 or arr.shape[1] != BOX_FIELDS:
        raise ValidationError(
            f"box buffer must be (M, {BOX_FIELDS}) rows of cx, cy, cz, l, w, h, yaw, "
            f"class_id, got shape {arr.shape}"
        )
    return tuple(
        Box3D(*(float(v) for v in row[:7]), class_id=int(row[7])) for row in arr
    )


def _boxes_to_buffer(boxes: Sequence[Box3D]) -> np.ndarray:
    out = np.empty((len(boxes), BOX_FIELDS), dtype=np.float64)
    for i, b in enumerate(boxes):
        out[i] = (b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, float(b.class_id))
    return out


class ConfigHandle:
    """A loaded project configuration plus its lazily opened database."""

    def __init__(self, config: ProjectConfig):
        self.config = config
        self._database: Optional[GtDatabase] = None

    @property
    def catalog(self):
        return self.config.catalog

    @property
    def database(self) -> GtDatabase:
        if self._database is None:
            self._database = load_database(self.config.database_dir)
        return self._database


def load_config(path) -> ConfigHandle:
    """Load the same TOML project file the command line uses."""
    return ConfigHandle(load_project_config(path))


def augment_frame(
    points,
    boxes,
    config: ConfigHandle,
    frame_id: str,
    calib: Calibration,
    semantic: Optional[SemanticSource] = None,
    seed: Optional[int] = None,
):
    """Augment one frame given as buffers.

    Returns (points, boxes, audit): an (N', 4) float32 array, an (M', 8)
    float64 array whose rows follow the input convention, and the audit
    dict the command line would have written for this frame. The per-frame
    random stream is derived from (seed, frame_id) exactly as the command
    line derives it, so outputs serialize bit-identically.
    """
    if not isinstance(config, ConfigHandle):
        raise ValidationError("config must be a ConfigHandle from load_config()")
    cloud = ArrayView(points).to_cloud(frame_id)
    frame = FrameBundle(
        cloud=cloud,
        boxes=_boxes_from_buffer(boxes),
        calib=calib,
        semantic=semantic,
    )
    use_seed = config.config.seed if seed is None else int(seed)
    result = _augment(
        frame,
        config.database,
        config.catalog,
        config.config.sampler,
        frame_rng(use_seed, frame_id),
    )
    return (
        np.asarray(result.cloud.data),
        _boxes_to_buffer(result.boxes),
        audit_payload(result, config.catalog),
    )


class DwaScheduler:
    """Stateful per-run scheduler handle.

    Feed one iteration's per-head scalar losses per ``step`` call; the
    returned list holds the current weights in ascending head order,
    updating every ``window`` iterations. Handles share nothing, so one
    per training process is safe.
    """

    def __init__(self, temperature: float = 2.0, window: int = 50):
        self._core = _CoreScheduler(DwaConfig(temperature=temperature, window=window))
        self._iteration = 0
        self._current: Optional[list] = None

    def step(
        self,
        losses: Union[Sequence[float], Mapping[int, float]],
        iteration: Optional[int] = None,
    ) -> list:
        if iteration is not None and iteration != self._iteration:
            raise ValidationError(
                f"losses arrived out of order: expected iteration {self._iteration}, "
                f"got {iteration}"
            )
        if isinstance(losses, Mapping):
            totals = {int(k): float(v) for k, v in losses.items()}
        else:
            totals = {i: float(v) for i, v in enumerate(losses)}
        for cid, v in totals.items():
            if not math.isfinite(v):
                raise ValidationError(f"head {cid} has non-finite loss {v}")
        vec = self._core.observe_totals(totals)
        self._iteration += 1
        if vec is not None:
            self._current = vec.as_list()
        elif self._current is None:
            self._current = [1.0] * len(totals)
        return list(self._current)

"""Contextual ground-truth sampling end to end, in memory.

Builds a tiny two-frame world, collects its objects into a database, then
augments a target frame twice: once over a semantic map that is all
sidewalk on the left half and all road on the right, and once over an
all-road map where pedestrians have nowhere legitimate to land.

Run:  python demos/contextual_sampling_demo.py
"""
import math

import numpy as np

from lidar_rebalance import (
    Box3D,
    Calibration,
    ClassCatalog,
    PointCloud,
    SamplerConfig,
    SemanticImageMap,
    augment_frame,
    build_database,
    frame_rng,
)
from lidar_rebalance.ingest import FrameBundle

rng = np.random.default_rng(7)

catalog = ClassCatalog.build(
    names=["Car", "Pedestrian"],
    targets={"Car": 0, "Pedestrian": 4},
    associations={"Car": ["road"], "Pedestrian": ["sidewalk"]},
    default_min_points=5,
)
CAR, PED = catalog.id_of("Car"), catalog.id_of("Pedestrian")

calib = Calibration(
    intrinsic=np.array([[175.0, 0, 155.0], [0, 175.0, 45.0], [0, 0, 1.0]]),
    lidar_to_camera=np.array(
        [[0, -1, 0, 0], [0, 0, -1, -0.08], [1, 0, 0, -0.27], [0, 0, 0, 1.0]]
    ),
    image_width=312,
    image_height=94,
)


def painted_map(kind):
    labels = np.zeros((94, 312), dtype=np.uint8)
    if kind == "split":
        labels[:, :155] = 2  # left of the optical axis <=> bev y > 0
        labels[:, 155:] = 1
    else:
        labels[:] = 1
    return SemanticImageMap(312, 94, labels, {0: "other", 1: "road", 2: "sidewalk"})


def scatter_in(box, n):
    local = rng.uniform(-0.45, 0.45, (n, 3)) * (box.l, box.w, box.h)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = local @ np.array([[c, s, 0], [-s, c, 0], [0, 0, 1.0]]) + box.center
    return np.column_stack([world, rng.uniform(0, 1, n)]).astype(np.float32)


def make_frame(fid, boxes):
    pts = [scatter_in(b, 30) for b in boxes]
    ground = np.column_stack(
        [rng.uniform(12, 55, 150), rng.uniform(-10, 10, 150),
         rng.uniform(-1.8, -1.7, 150), rng.uniform(0, 1, 150)]
    ).astype(np.float32)
    cloud = PointCloud(np.concatenate([ground, *pts]), fid)
    return FrameBundle(cloud=cloud, boxes=tuple(boxes), calib=calib,
                       semantic=painted_map("split"))


donors = make_frame(
    "donor",
    [
        Box3D(20, 4, -0.85, 0.8, 0.6, 1.75, 0.3, PED),
        Box3D(30, -4, -0.85, 0.8, 0.6, 1.75, -1.1, PED),
        Box3D(42, 7, -0.85, 0.8, 0.6, 1.75, 2.0, PED),
        Box3D(25, -7, -0.98, 4.0, 1.8, 1.5, 0.0, CAR),
    ],
)
db = build_database([donors], catalog)
print("database:", {catalog.name_of(c): n for c, n in db.counts.items()})

target = make_frame("target", [Box3D(35, 2, -0.98, 4.0, 1.8, 1.5, 0.4, CAR)])

print("\n--- split map (sidewalk on the left half) ---")
out = augment_frame(target, db, catalog, SamplerConfig(), frame_rng(42, "target"))
for p in out.inserted:
    print(f"  placed {p.record_uid} at x={p.pose.x:.1f} y={p.pose.y:.1f} (y>0 is sidewalk)")
audit = out.audit.for_class(PED)
print(f"  accepted {audit.accepted}, rejections {dict(audit.rejections)}")
print(f"  cloud grew {len(target.cloud)} -> {len(out.cloud)} points")

print("\n--- all-road map: pedestrians have no admissible region ---")
road_target = FrameBundle(target.cloud, target.boxes, calib, painted_map("road"))
out = augment_frame(road_target, db, catalog, SamplerConfig(), frame_rng(42, "target"))
audit = out.audit.for_class(PED)
print(f"  accepted {audit.accepted}, rejections {dict(audit.rejections)}")

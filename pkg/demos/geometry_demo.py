"""Tour of the geometry primitives: oriented-box tests, BEV IoU,
camera projection, and pillar tuple augmentation.

Run:  python demos/geometry_demo.py
"""
import math

import numpy as np

from lidar_rebalance import (
    BevGridSpec,
    Box3D,
    Calibration,
    Pixel,
    PointCloud,
    bev_iou,
    extract_points_in_box,
    ground_anchor,
    pillarize,
    point_in_obb,
    project_to_image,
)

# --- point-in-box with a rotated box -----------------------------------
box = Box3D(cx=0, cy=0, cz=0, l=4, w=2, h=2, yaw=math.pi / 2)
print("rotated 4x2x2 box, point (0.9, 1.9, 0):", point_in_obb((0.9, 1.9, 0.0), box))
print("same box, point (3, 0, 0):", point_in_obb((3.0, 0.0, 0.0), box))

# --- BEV IoU of two overlapping footprints -----------------------------
a = Box3D(0, 0, 0, 2, 2, 1, 0.0)
b = Box3D(1, 0, 0, 2, 2, 1, 0.0)
print(f"two 2x2 boxes, centers 1 m apart: IoU = {bev_iou(a, b):.6f}  (exactly 1/3)")

# --- extraction preserves order ----------------------------------------
rng = np.random.default_rng(0)
cloud = PointCloud(
    np.column_stack([rng.uniform(-3, 3, (500, 3)), rng.uniform(0, 1, 500)]).astype(np.float32)
)
inside = extract_points_in_box(cloud, Box3D(0, 0, 0, 2, 2, 2, 0.7))
print(f"{len(inside)} of {len(cloud)} random points fall inside a 2 m cube at 0.7 rad")

# --- camera projection of a ground anchor ------------------------------
calib = Calibration(
    intrinsic=np.array([[700.0, 0, 620.0], [0, 700.0, 180.0], [0, 0, 1.0]]),
    lidar_to_camera=np.array(
        [[0, -1, 0, 0], [0, 0, -1, -0.08], [1, 0, 0, -0.27], [0, 0, 0, 1.0]]
    ),
    image_width=1242,
    image_height=375,
)
anchor = ground_anchor(Box3D(20.0, 3.0, -0.9, 4, 2, 1.5, 0.0))
pixel = project_to_image(anchor, calib)
if isinstance(pixel, Pixel):
    print(f"box at (20, 3) anchors on pixel ({pixel.u:.1f}, {pixel.v:.1f}), depth {pixel.depth:.2f} m")
else:
    print("anchor not visible:", pixel.value)

# --- pillar tuple augmentation -----------------------------------------
grid = pillarize(cloud, BevGridSpec(x_min=-4, y_min=-4, cell_size=2.0, nx=4, ny=4))
n_pillars = len(grid.pillars)
print(f"pillarized into {n_pillars} occupied pillars ({grid.dropped} points dropped)")
some_key = sorted(grid.pillars)[0]
feats = grid.pillars[some_key]
print(
    f"pillar {some_key}: {feats.shape[0]} points, "
    f"mean |offset from pillar mean| = {np.abs(feats[:, 4:7]).mean():.3f} m"
)

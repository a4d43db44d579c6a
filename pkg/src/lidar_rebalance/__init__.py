"""Class-imbalance toolkit for LiDAR-based 3D object detection pipelines.

Builds a ground-truth object database, performs semantics-aware ground
truth sampling to augment point-cloud frames, and computes dynamic
weight average balancing weights for per-class detection heads.
"""

from .balance import (
    DwaConfig,
    DwaScheduler,
    LossSnapshot,
    WeightTrajectory,
    WeightVector,
    dwa_step,
    run_trajectory,
    total_loss,
    window_average,
)
from .core import (
    Box3D,
    Calibration,
    ClassCatalog,
    Point,
    PointCloud,
    SemanticImageMap,
    SemanticPointMap,
    associated_labels,
)
from .config import ProjectConfig, load_project_config
from .errors import (
    CatalogLookupError,
    ConfigurationError,
    DataIOError,
    FormatError,
    LidarRebalanceError,
    ValidationError,
)
from .geometry import (
    BevGridSpec,
    OccupancyGrid,
    Outside,
    Pixel,
    PillarGrid,
    bev_iou,
    box_camera_to_lidar,
    box_lidar_to_camera,
    extract_points_in_box,
    ground_anchor,
    occupancy_grid,
    pillarize,
    point_in_obb,
    project_to_image,
)
from .gtdb import GtDatabase, GtRecord, build_database
from .ingest import ClassStats, FrameBundle, dataset_stats
from .sampler import (
    AugmentedFrame,
    Placement,
    SamplerConfig,
    augment_frame,
    collision_filter,
    frame_rng,
    propose_placements,
    semantic_filter,
)

__version__ = "0.1.0"

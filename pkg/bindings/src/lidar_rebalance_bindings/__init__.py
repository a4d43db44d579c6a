"""In-process bindings for ML training loops.

Thin adapters over the lidar-rebalance package: numeric buffers in,
numeric buffers out, no business logic of their own. Augmentation
results are bit-identical to the command-line path for identical
inputs, config, and seed, because both paths call the same code with
the same per-frame random stream.
"""
from .bindings import ArrayView, ConfigHandle, DwaScheduler, augment_frame, load_config
from lidar_rebalance.errors import (
    CatalogLookupError,
    ConfigurationError,
    DataIOError,
    FormatError,
    LidarRebalanceError,
    ValidationError,
)

__all__ = [
    "ArrayView",
    "ConfigHandle",
    "DwaScheduler",
    "augment_frame",
    "load_config",
    "CatalogLookupError",
    "ConfigurationError",
    "DataIOError",
    "FormatError",
    "LidarRebalanceError",
    "ValidationError",
]

__version__ = "0.1.0"

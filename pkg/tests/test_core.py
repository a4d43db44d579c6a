import math

import numpy as np
import pytest

from lidar_rebalance.core import (
    Box3D,
    Calibration,
    ClassCatalog,
    Point,
    PointCloud,
    SemanticImageMap,
    SemanticPointMap,
    associated_labels,
)
from lidar_rebalance.errors import CatalogLookupError, ValidationError

from helpers import kitti_catalog


def nuscenes_catalog():
    names = ["Car", "Truck", "Bus", "Trailer", "ConstructionVehicle",
             "Pedestrian", "Motorcycle", "Bicycle", "Barrier", "TrafficCone"]
    both = ["Sidewalk", "Drivable Surface"]
    return ClassCatalog.build(
        names=names,
        targets={n: 2 for n in names},
        associations={
            "Pedestrian": ["Sidewalk"],
            "Car": ["Drivable Surface"],
            "Truck": ["Drivable Surface"],
            "Bus": ["Drivable Surface"],
            "Trailer": ["Drivable Surface"],
            "ConstructionVehicle": ["Drivable Surface"],
            "Motorcycle": both,
            "Bicycle": both,
            "Barrier": both,
            "TrafficCone": both,
        },
    )


class TestClassCatalog:
    def test_kitti_association_table(self):
        cat = kitti_catalog()
        assert associated_labels(cat, cat.id_of("Pedestrian")) == {"sidewalk"}
        assert associated_labels(cat, cat.id_of("Cyclist")) == {"sidewalk", "road"}
        assert associated_labels(cat, cat.id_of("Car")) == {"road"}

    def test_nuscenes_style_association_table(self):
        cat = nuscenes_catalog()
        assert associated_labels(cat, cat.id_of("Car")) == {"drivable surface"}
        assert associated_labels(cat, cat.id_of("Bicycle")) == {"sidewalk", "drivable surface"}

    def test_names_normalized_case_insensitively(self):
        cat = ClassCatalog.build(
            names=["Pedestrian"],
            targets={"Pedestrian": 1},
            associations={"Pedestrian": ["  SideWalk "]},
        )
        assert cat.associated_labels(0) == {"sidewalk"}

    def test_unknown_class_is_lookup_error(self):
        cat = kitti_catalog()
        with pytest.raises(CatalogLookupError):
            cat.associated_labels(99)
        with pytest.raises(CatalogLookupError):
            cat.id_of("Gnome")

    def test_pure_lookup(self):
        cat = kitti_catalog()
        first = cat.associated_labels(1)
        assert all(cat.associated_labels(1) == first for _ in range(5))

    def test_ids_must_be_dense(self):
        with pytest.raises(ValidationError):
            ClassCatalog(classes=((0, "a"), (2, "b")), targets={}, associations={}, min_points={})

    def test_names_must_be_unique(self):
        with pytest.raises(ValidationError):
            ClassCatalog.build(names=["a", "a"], targets={}, associations={})

    def test_target_without_association_rejected(self):
        with pytest.raises(ValidationError):
            ClassCatalog.build(names=["a"], targets={"a": 3}, associations={})

    def test_round_trip_byte_equality(self):
        for cat in (kitti_catalog(), nuscenes_catalog()):
            text = cat.to_json()
            assert ClassCatalog.from_json(text).to_json() == text


class TestPointTypes:
    def test_point_requires_finite_coordinates(self):
        with pytest.raises(ValidationError):
            Point(float("nan"), 0, 0)
        with pytest.raises(ValidationError):
            Point(0, float("inf"), 0)

    def test_cloud_shape_checked(self):
        with pytest.raises(ValidationError):
            PointCloud(np.zeros((3, 3)))

    def test_cloud_preserves_order_and_is_readonly(self):
        data = np.arange(12, dtype=np.float32).reshape(3, 4)
        cloud = PointCloud(data, "f0")
        assert np.array_equal(cloud.data, data)
        assert not cloud.data.flags.writeable
        assert len(cloud) == 3

    def test_empty_cloud(self):
        assert len(PointCloud.empty("x")) == 0


class TestBox3D:
    def test_dimensions_must_be_positive(self):
        with pytest.raises(ValidationError):
            Box3D(0, 0, 0, 0.0, 1, 1, 0)

    def test_yaw_normalized(self):
        assert Box3D(0, 0, 0, 1, 1, 1, 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)
        assert Box3D(0, 0, 0, 1, 1, 1, -math.pi).yaw == pytest.approx(math.pi)
        assert Box3D(0, 0, 0, 1, 1, 1, math.pi).yaw == pytest.approx(math.pi)


class TestCalibration:
    def test_rotation_must_be_orthonormal(self):
        t = np.eye(4)
        t[0, 1] = 1e-3
        with pytest.raises(ValidationError):
            Calibration(np.eye(3) * 100.0 + np.eye(3), t, 100, 100)

    def test_reflections_rejected(self):
        t = np.eye(4)
        t[2, 2] = -1.0
        with pytest.raises(ValidationError):
            Calibration(np.diag([100.0, 100.0, 1.0]), t, 100, 100)

    def test_focal_must_be_positive(self):
        k = np.diag([-100.0, 100.0, 1.0])
        with pytest.raises(ValidationError):
            Calibration(k, np.eye(4), 100, 100)

    def test_inverse_is_rigid_inverse(self):
        from helpers import make_calibration

        calib = make_calibration()
        assert np.allclose(calib.camera_to_lidar @ calib.lidar_to_camera, np.eye(4), atol=1e-12)


class TestSemanticMaps:
    def test_image_map_size_checked(self):
        with pytest.raises(ValidationError):
            SemanticImageMap(4, 4, np.zeros(15, dtype=np.uint8), {0: "x"})

    def test_every_id_needs_a_legend_entry(self):
        with pytest.raises(ValidationError):
            SemanticImageMap(2, 2, np.array([[0, 1], [0, 0]], dtype=np.uint8), {0: "x"})

    def test_label_lookup(self):
        m = SemanticImageMap(2, 2, np.array([[0, 1], [2, 0]], dtype=np.uint8),
                             {0: "Other", 1: "Road", 2: "Sidewalk"})
        assert m.label_name_at(1.7, 0.2) == "road"
        assert m.label_name_at(0.0, 1.9) == "sidewalk"

    def test_point_map_must_be_non_empty(self):
        with pytest.raises(ValidationError):
            SemanticPointMap(np.zeros((0, 3)), np.zeros(0, dtype=int), {})

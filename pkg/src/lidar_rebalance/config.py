"""Project configuration: one TOML file drives every command.

Paths are resolved relative to the config file so a project directory can
be moved wholesale. Validation happens at load time: every referenced
class must resolve and numeric ranges are checked before any work starts.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from .balance import DwaConfig, SyntheticHeadSpec
from .core import ClassCatalog
from .errors import DataIOError, FormatError, ValidationError
from .geometry import BevGridSpec
from .sampler import SamplerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["DatasetPaths", "SyntheticSpec", "ProjectConfig", "load_project_config"]

SEMANTIC_KINDS = ("image", "points", "none")


@dataclass(frozen=True)
class DatasetPaths:
    root: Path
    velodyne_dir: Path
    label_dir: Path
    calib_dir: Path
    semantic_dir: Path
    semantic_kind: str = "image"
    image_width: int = 1242
    image_height: int = 375
    strict_labels: bool = False

    def __post_init__(self):
        if self.semantic_kind not in SEMANTIC_KINDS:
            raise ValidationError(
                f"semantic_kind must be one of {SEMANTIC_KINDS}, got {self.semantic_kind!r}"
            )


@dataclass(frozen=True)
class SyntheticSpec:
    heads: Dict[int, SyntheticHeadSpec]
    iterations: int = 500
    n_pos: int = 10

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.n_pos < 1:
            raise ValidationError(f"n_pos must be >= 1, got {self.n_pos}")


@dataclass(frozen=True)
class ProjectConfig:
    catalog: ClassCatalog
    dataset: Optional[DatasetPaths]
    sampler: SamplerConfig
    dwa: DwaConfig
    synthetic: Optional[SyntheticSpec]
    losses_csv: Optional[Path]
    output_dir: Path
    database_dir: Path
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ValidationError(f"config is missing [{where}] {key}")
    return table[key]


def _catalog_from_table(table: dict) -> ClassCatalog:
    names = _require(table, "classes", "catalog")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ValidationError("[catalog] classes must be a list of class names")
    return ClassCatalog.build(
        names=names,
        targets=table.get("targets", {}),
        associations={k: list(v) for k, v in table.get("associations", {}).items()},
        min_points=table.get("min_points", None),
        default_min_points=int(table.get("default_min_points", 5)),
    )


def _dataset_from_table(table: dict, base: Path) -> DatasetPaths:
    root = base / _require(table, "root", "dataset")
    return DatasetPaths(
        root=root,
        velodyne_dir=root / table.get("velodyne_dir", "velodyne"),
        label_dir=root / table.get("label_dir", "label_2"),
        calib_dir=root / table.get("calib_dir", "calib"),
        semantic_dir=root / table.get("semantic_dir", "semantic"),
        semantic_kind=table.get("semantic_kind", "image"),
        image_width=int(table.get("image_width", 1242)),
        image_height=int(table.get("image_height", 375)),
        strict_labels=bool(table.get("strict_labels", False)),
    )


def _sampler_from_table(table: dict) -> SamplerConfig:
    grid = None
    if "grid" in table:
        g = table["grid"]
        grid = BevGridSpec(
            x_min=float(_require(g, "x_min", "sampler.grid")),
            y_min=float(_require(g, "y_min", "sampler.grid")),
            cell_size=float(_require(g, "cell_size", "sampler.grid")),
            nx=int(_require(g, "nx", "sampler.grid")),
            ny=int(_require(g, "ny", "sampler.grid")),
        )
    return SamplerConfig(
        mode=table.get("mode", "contextual-filter"),
        collision_iou=float(table.get("collision_iou", 0.0)),
        knn_k=int(table.get("knn_k", 5)),
        retry_budget=int(table.get("retry_budget", 10)),
        permissive_off_map=bool(table.get("permissive_off_map", False)),
        grid=grid,
    )


def _synthetic_from_table(table: dict, catalog: ClassCatalog) -> SyntheticSpec:
    heads_table = _require(table, "heads", "dwa.synthetic")
    heads = {}
    for name, spec in heads_table.items():
        heads[catalog.id_of(name)] = SyntheticHeadSpec(
            initial=float(_require(spec, "initial", f"dwa.synthetic.heads.{name}")),
            decay=float(_require(spec, "decay", f"dwa.synthetic.heads.{name}")),
            noise=float(spec.get("noise", 0.0)),
        )
    return SyntheticSpec(
        heads=heads,
        iterations=int(table.get("iterations", 500)),
        n_pos=int(table.get("n_pos", 10)),
    )


def load_project_config(path) -> ProjectConfig:
    """Load and validate the project TOML file."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"invalid TOML: {exc}", path=path) from None

    base = path.parent
    catalog = _catalog_from_table(_require(raw, "catalog", "config root"))
    dataset = _dataset_from_table(raw["dataset"], base) if "dataset" in raw else None

    dwa_table = raw.get("dwa", {})
    dwa = DwaConfig(
        temperature=float(dwa_table.get("temperature", 2.0)),
        window=int(dwa_table.get("window", 50)),
    )
    synthetic = (
        _synthetic_from_table(dwa_table["synthetic"], catalog)
        if "synthetic" in dwa_table
        else None
    )
    losses_csv = dwa_table.get("losses_csv")

    output_table = raw.get("output", {})
    output_dir = base / output_table.get("dir", "out")
    return ProjectConfig(
        catalog=catalog,
        dataset=dataset,
        sampler=_sampler_from_table(raw.get("sampler", {})),
        dwa=dwa,
        synthetic=synthetic,
        losses_csv=(base / losses_csv) if losses_csv else None,
        output_dir=output_dir,
        database_dir=output_dir / output_table.get("database_dir", "gt_database"),
        seed=int(raw.get("seed", 0)),
        workers=int(raw.get("workers", 1)),
    )

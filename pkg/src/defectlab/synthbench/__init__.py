"""Procedural benchmark: textured surfaces, injected defects, grid labels,
templated answers, and editing pairs for generation pretraining."""

from .labels import (
    CATEGORIES,
    DEFECT_TYPES,
    SIZE_BUCKETS,
    TASKS,
    GridCell,
    grid_label_from_mask,
    make_answer_text,
    size_bucket,
)
from .textures import gen_texture
from .defects import dilate, inject_defect, render_overlay
from .dataset import (
    DatasetManifest,
    SampleRecord,
    build_dataset,
    load_manifest,
    load_record,
    load_split,
)
from .editing import EDIT_OPS, make_editing_pair

__all__ = [
    "CATEGORIES",
    "DEFECT_TYPES",
    "TASKS",
    "SIZE_BUCKETS",
    "GridCell",
    "grid_label_from_mask",
    "make_answer_text",
    "size_bucket",
    "gen_texture",
    "dilate",
    "inject_defect",
    "render_overlay",
    "DatasetManifest",
    "SampleRecord",
    "build_dataset",
    "load_manifest",
    "load_record",
    "load_split",
    "EDIT_OPS",
    "make_editing_pair",
]

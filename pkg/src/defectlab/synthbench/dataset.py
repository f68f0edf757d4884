"""Benchmark dataset build, disk layout and loading.

Layout under the output directory::

    manifest.json                     seed, counts, records (schema shipped
                                      in assets/manifest.schema.json)
    data/<split>/<id>.img.npy         float32 H x W x 3 image in [0, 1]
    data/<split>/<id>.clean.npy       float32 pre-defect source image
    data/<split>/<id>.mask.png        8-bit mask, 0/255

Generation is a pure function of (config, seed): every record derives its
randomness from (seed, split, index), so parallel and serial builds are
bit-identical, and rebuilding yields a byte-identical manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..config import DataConfig
from .labels import CATEGORIES, DEFECT_TYPES, GridCell, grid_label_from_mask, make_answer_text
from .textures import gen_texture
from .defects import inject_defect

_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "assets" / "manifest.schema.json"


@dataclass
class SampleRecord:
    """One benchmark item; arrays are loaded on demand via :func:`load_record`."""

    id: str
    split: str
    category: str
    defect_type: str | None
    grid_cell: GridCell | None
    answers: dict[str, str]
    paths: dict[str, str]
    image: np.ndarray | None = None
    clean: np.ndarray | None = None
    mask: np.ndarray | None = None

    @property
    def anomalous(self) -> bool:
        return self.defect_type is not None


@dataclass
class DatasetManifest:
    seed: int
    image_size: int
    counts: dict
    records: list[SampleRecord]
    root: Path


def _record_seed(seed: int, split: str, index: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}/{split}/{index}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _is_normal(index: int, count: int, n_normal: int) -> bool:
    # evenly spaced exact assignment (Bresenham-style)
    return (index * n_normal) // count != ((index + 1) * n_normal) // count


def generate_record_arrays(
    cfg: DataConfig, split: str, index: int, count: int, n_normal: int
) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray]:
    """Build one record's metadata and arrays, independent of all others."""
    category = CATEGORIES[index % len(CATEGORIES)]
    clean = gen_texture(category, _record_seed(cfg.seed, split, index, "texture"), cfg.image_size)
    normal = _is_normal(index, count, n_normal)
    rec_id = f"{split}-{index:05d}"

    if normal:
        image = clean.copy()
        mask = np.zeros((cfg.image_size, cfg.image_size), dtype=bool)
        defect_type = None
        cell = None
    else:
        defect_type = DEFECT_TYPES[(index // len(CATEGORIES)) % len(DEFECT_TYPES)]
        image, mask = inject_defect(clean, defect_type, _record_seed(cfg.seed, split, index, "defect"))
        cell = grid_label_from_mask(mask)

    area_ratio = float(mask.mean())
    answers = {
        "decision": make_answer_text(category, defect_type, cell, area_ratio, "decision"),
        "analysis": make_answer_text(category, defect_type, cell, area_ratio, "analysis"),
    }
    if not normal:
        answers["location"] = make_answer_text(category, defect_type, cell, area_ratio, "location")
        answers["defect_type"] = make_answer_text(category, defect_type, cell, area_ratio, "defect_type")

    meta = {
        "id": rec_id,
        "split": split,
        "category": category,
        "defect_type": defect_type,
        "grid_cell": None if cell is None else [cell.row, cell.col],
        "answers": answers,
        "paths": {
            "image": f"data/{split}/{rec_id}.img.npy",
            "clean": f"data/{split}/{rec_id}.clean.npy",
            "mask": f"data/{split}/{rec_id}.mask.png",
        },
    }
    return meta, image.astype(np.float32), clean.astype(np.float32), mask


def build_dataset(cfg: DataConfig, out_dir: str | Path) -> Path:
    """Generate the benchmark and write it under `out_dir`.

    Returns:
        Path of the written manifest.json.
    """
    out_dir = Path(out_dir)
    counts = {"train": cfg.train_count, "test": cfg.test_count}
    records_meta: list[dict] = []
    tallies: dict[str, dict] = {}

    for split, count in counts.items():
        split_dir = out_dir / "data" / split
        split_dir.mkdir(parents=True, exist_ok=True)
        n_normal = int(round(count * cfg.normal_ratio))
        tally = {"total": count, "normal": 0, "per_category": {}, "per_defect_type": {}}
        for index in range(count):
            meta, image, clean, mask = generate_record_arrays(cfg, split, index, count, n_normal)
            np.save(out_dir / meta["paths"]["image"], image)
            np.save(out_dir / meta["paths"]["clean"], clean)
            Image.fromarray((mask.astype(np.uint8)) * 255, mode="L").save(out_dir / meta["paths"]["mask"])
            records_meta.append(meta)
            tally["per_category"][meta["category"]] = tally["per_category"].get(meta["category"], 0) + 1
            if meta["defect_type"] is None:
                tally["normal"] += 1
            else:
                key = meta["defect_type"]
                tally["per_defect_type"][key] = tally["per_defect_type"].get(key, 0) + 1
        tallies[split] = tally

    manifest = {
        "schema_version": 1,
        "seed": cfg.seed,
        "image_size": cfg.image_size,
        "normal_ratio": cfg.normal_ratio,
        "counts": tallies,
        "records": records_meta,
    }
    validate_manifest(manifest)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def validate_manifest(manifest: dict) -> None:
    """Check the manifest against the shipped JSON schema."""
    import jsonschema

    schema = json.loads(_SCHEMA_PATH.read_text(encoding="utf-8"))
    jsonschema.validate(manifest, schema)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    validate_manifest(raw)
    records = []
    for meta in raw["records"]:
        cell = meta["grid_cell"]
        records.append(
            SampleRecord(
                id=meta["id"],
                split=meta["split"],
                category=meta["category"],
                defect_type=meta["defect_type"],
                grid_cell=None if cell is None else GridCell(cell[0], cell[1]),
                answers=meta["answers"],
                paths=meta["paths"],
            )
        )
    return DatasetManifest(
        seed=raw["seed"],
        image_size=raw["image_size"],
        counts=raw["counts"],
        records=records,
        root=path.parent,
    )


def load_record(manifest: DatasetManifest, record: SampleRecord) -> SampleRecord:
    """Load a record's arrays from disk in place (no-op when present)."""
    if record.image is None:
        record.image = np.load(manifest.root / record.paths["image"])
        record.clean = np.load(manifest.root / record.paths["clean"])
        mask = np.asarray(Image.open(manifest.root / record.paths["mask"]))
        record.mask = mask >= 128
    return record


def load_split(manifest: DatasetManifest, split: str) -> list[SampleRecord]:
    """All records of one split with arrays loaded."""
    out = [load_record(manifest, r) for r in manifest.records if r.split == split]
    if not out:
        raise ValueError(f"split {split!r} has no records")
    return out

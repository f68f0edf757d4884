"""Benchmark generator contracts: textures, defects, labels, answers,
dataset build."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest
from scipy import ndimage

from defectlab.config import DataConfig
from defectlab.metrics.text import parse_grid_answer
from defectlab.synthbench import (
    CATEGORIES,
    DEFECT_TYPES,
    GridCell,
    build_dataset,
    dilate,
    gen_texture,
    grid_label_from_mask,
    inject_defect,
    load_manifest,
    load_split,
    make_answer_text,
    make_editing_pair,
    render_overlay,
)
from defectlab.synthbench.dataset import generate_record_arrays


# ---------------------------------------------------------------------------
# textures
# ---------------------------------------------------------------------------

def test_texture_range_and_shape():
    img = gen_texture("checker", 0, 64)
    assert img.shape == (64, 64, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_texture_determinism():
    for cat in CATEGORIES:
        a = gen_texture(cat, 5, 64)
        b = gen_texture(cat, 5, 64)
        assert np.array_equal(a, b)


def test_texture_seeds_differ():
    a = gen_texture("stripes", 1, 64)
    b = gen_texture("stripes", 2, 64)
    frac = np.mean(np.any(a != b, axis=2))
    assert frac >= 0.01


def test_texture_errors():
    with pytest.raises(ValueError):
        gen_texture("plaid", 0, 64)
    with pytest.raises(ValueError):
        gen_texture("grid", 0, 16)


# ---------------------------------------------------------------------------
# defect injection
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("defect_type", DEFECT_TYPES)
def test_inject_defect_postconditions(defect_type):
    clean = gen_texture("blobs", 3, 64)
    for seed in range(10):
        img, mask = inject_defect(clean, defect_type, seed)
        ratio = mask.mean()
        assert 0.005 <= ratio <= 0.15
        outside = ~dilate(mask, 2)
        assert np.array_equal(img[outside], clean[outside])
        _, n_components = ndimage.label(mask, structure=np.ones((3, 3)))
        assert n_components == 1


def test_inject_defect_visibility_over_100_samples():
    diffs = []
    for i in range(100):
        clean = gen_texture(CATEGORIES[i % 6], i, 64)
        img, mask = inject_defect(clean, DEFECT_TYPES[i % 6], i)
        diffs.append(np.abs(img - mask[..., None] * 0 - clean)[mask].mean())
    assert float(np.mean(diffs)) > 0.05


def test_inject_defect_unknown_type():
    with pytest.raises(ValueError):
        inject_defect(gen_texture("grid", 0, 64), "dent", 0)


# ---------------------------------------------------------------------------
# grid labels
# ---------------------------------------------------------------------------

def test_grid_label_corner_pixel():
    mask = np.zeros((64, 64), dtype=bool)
    mask[0, 0] = True
    assert grid_label_from_mask(mask) == GridCell(0, 0)
    assert grid_label_from_mask(mask).phrase == "top-left"


def test_grid_label_full_mask_center():
    assert grid_label_from_mask(np.ones((64, 64), dtype=bool)) == GridCell(1, 1)


def test_grid_label_disk_top_right():
    yy, xx = np.mgrid[0:64, 0:64]
    mask = (yy - 10) ** 2 + (xx - 55) ** 2 <= 16
    # centroid (10, 55): row floor(10*3/64)=0, col floor(55*3/64)=2
    assert grid_label_from_mask(mask) == GridCell(0, 2)


def test_grid_label_boundary_resolves_lower():
    # centroid row = 64/3 exactly (rows 21,21,22 + one balanced column pick)
    mask = np.zeros((96, 96), dtype=bool)
    mask[32, 10] = True  # centroid row 32 = 96/3 exactly, boundary of cells 0|1
    assert grid_label_from_mask(mask).row == 0
    mask2 = np.zeros((96, 96), dtype=bool)
    mask2[64, 10] = True  # 64 = 2*96/3, boundary of cells 1|2
    assert grid_label_from_mask(mask2).row == 1


def test_grid_label_empty_mask_rejected():
    with pytest.raises(ValueError):
        grid_label_from_mask(np.zeros((64, 64), dtype=bool))


# ---------------------------------------------------------------------------
# answers
# ---------------------------------------------------------------------------

def test_answer_decision():
    assert make_answer_text("grid", None, None, 0.0, "decision") == "normal"
    assert make_answer_text("grid", "hole", GridCell(0, 0), 0.01, "decision") == "anomalous"


def test_answer_location_template():
    out = make_answer_text("rings", "scratch", GridCell(0, 0), 0.01, "location")
    assert out == "the defect is located at the top-left region"


def test_answer_analysis_size_buckets():
    small = make_answer_text("checker", "stain", GridCell(2, 2), 0.01, "analysis")
    assert "small" in small and "stain" in small
    medium = make_answer_text("checker", "stain", GridCell(2, 2), 0.02, "analysis")
    assert "medium" in medium
    large = make_answer_text("checker", "stain", GridCell(2, 2), 0.06, "analysis")
    assert "large" in large


def test_answer_errors_on_normal():
    for task in ("location", "defect_type"):
        with pytest.raises(ValueError):
            make_answer_text("grid", None, None, 0.0, task)
    with pytest.raises(ValueError):
        make_answer_text("grid", None, None, 0.0, "caption")


def test_answer_phrase_round_trips_through_parser():
    for row in range(3):
        for col in range(3):
            text = make_answer_text("grid", "hole", GridCell(row, col), 0.01, "location")
            assert parse_grid_answer(text) == (row, col)


# ---------------------------------------------------------------------------
# overlay
# ---------------------------------------------------------------------------

def test_overlay_empty_mask_is_identity():
    img = gen_texture("rings", 2, 64)
    out = render_overlay(img, np.zeros((64, 64), dtype=bool))
    assert np.array_equal(out, img)


def test_overlay_full_mask_on_black():
    out = render_overlay(np.zeros((8, 8, 3)), np.ones((8, 8), dtype=bool))
    assert np.allclose(out, np.array([0.5, 0.0, 0.0]))


def test_overlay_single_pixel():
    img = gen_texture("grid", 1, 64)
    mask = np.zeros((64, 64), dtype=bool)
    mask[5, 9] = True
    out = render_overlay(img, mask)
    assert int(np.any(out != img, axis=2).sum()) == 1


def test_overlay_shape_mismatch():
    with pytest.raises(ValueError):
        render_overlay(np.zeros((8, 8, 3)), np.zeros((4, 4), dtype=bool))


# ---------------------------------------------------------------------------
# dataset build
# ---------------------------------------------------------------------------

def test_build_counts_and_exact_ratio(tmp_path):
    cfg = DataConfig(seed=7, train_count=40, test_count=10, normal_ratio=0.3)
    manifest = load_manifest(build_dataset(cfg, tmp_path))
    train = [r for r in manifest.records if r.split == "train"]
    assert len(manifest.records) == 50
    assert sum(1 for r in train if r.defect_type is None) == 12  # 40 * 0.3 exactly


def test_build_deterministic_manifest(tmp_path):
    cfg = DataConfig(seed=9, train_count=12, test_count=6)
    h1 = hashlib.sha256(build_dataset(cfg, tmp_path / "a").read_bytes()).hexdigest()
    h2 = hashlib.sha256(build_dataset(cfg, tmp_path / "b").read_bytes()).hexdigest()
    assert h1 == h2


def test_records_independent_of_build_order():
    cfg = DataConfig(seed=4, train_count=30, test_count=6)
    meta_a, img_a, clean_a, mask_a = generate_record_arrays(cfg, "train", 17, 30, 9)
    meta_b, img_b, clean_b, mask_b = generate_record_arrays(cfg, "train", 17, 30, 9)
    assert meta_a == meta_b
    assert np.array_equal(img_a, img_b) and np.array_equal(mask_a, mask_b)


def test_dataset_invariants(tiny_manifest):
    for split in ("train", "test"):
        for rec in load_split(tiny_manifest, split):
            if rec.anomalous:
                assert rec.mask.any()
                assert grid_label_from_mask(rec.mask) == rec.grid_cell
                assert parse_grid_answer(rec.answers["location"]) == tuple(rec.grid_cell)
                outside = ~dilate(rec.mask, 2)
                assert np.allclose(rec.image[outside], rec.clean[outside], atol=1e-7)
                assert set(rec.answers) == {"decision", "analysis", "location", "defect_type"}
            else:
                assert not rec.mask.any()
                assert rec.grid_cell is None
                assert np.array_equal(rec.image, rec.clean)
                assert set(rec.answers) == {"decision", "analysis"}


def test_manifest_schema_rejects_bad_payload(tiny_manifest, tmp_path):
    from defectlab.synthbench.dataset import validate_manifest

    raw = json.loads((tiny_manifest.root / "manifest.json").read_text())
    raw["records"][0]["category"] = "plaid"
    with pytest.raises(Exception):
        validate_manifest(raw)


# ---------------------------------------------------------------------------
# editing pairs
# ---------------------------------------------------------------------------

def test_editing_pair_contracts():
    clean = gen_texture("stripes", 8, 64)
    seen_ops = set()
    for seed in range(30):
        source, target, mask, instruction = make_editing_pair(clean, seed)
        assert source.shape == target.shape == (64, 64, 3)
        assert target.min() >= 0.0 and target.max() <= 1.0
        assert mask.dtype == bool
        seen_ops.add(instruction.split()[0])
        if "flip" not in instruction:
            assert np.array_equal(source[~mask], target[~mask])
            assert np.abs(target[mask] - source[mask]).mean() > 0.01
    assert len(seen_ops) >= 4

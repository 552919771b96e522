from __future__ import annotations

import json

import numpy as np
import pytest

from collagekit.dataset import (
    BBoxAnnotation,
    Dataset,
    DatasetFormatError,
    ImageRecord,
    boxes_mask,
    density_stats,
    load_dataset,
    object_density,
    save_dataset,
)
from conftest import CATEGORIES, make_record, make_sparse_corpus
from oracles import rasterized_density, union_area_geometric


def write_coco(tmp_path, images, annotations, categories):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps({
        "images": images, "annotations": annotations, "categories": categories,
    }))
    return path


def test_load_two_image_file(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 100, "height": 80, "file_name": "a.png"},
                {"id": 2, "width": 50, "height": 50, "file_name": "b.png"}],
        annotations=[{"id": 1, "image_id": 1, "category_id": 1,
                      "bbox": [10, 10, 20, 20]}],
        categories=[{"id": 1, "name": "plane"}],
    )
    ds = load_dataset(path, tmp_path)
    assert len(ds) == 2
    assert ds.images[0].annotations[0].box == (10, 10, 20, 20)
    assert ds.total_annotations == 1


def test_zero_width_annotation_dropped(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 100, "height": 100, "file_name": "a.png"}],
        annotations=[{"id": 1, "image_id": 1, "category_id": 1, "bbox": [5, 5, 0, 10]},
                     {"id": 2, "image_id": 1, "category_id": 1, "bbox": [5, 5, 10, 10]}],
        categories=[{"id": 1, "name": "plane"}],
    )
    ds = load_dataset(path, tmp_path)
    assert ds.dropped_annotations == 1
    assert ds.total_annotations == 1


def test_out_of_bounds_box_clipped_flush(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 100, "height": 100, "file_name": "a.png"}],
        annotations=[{"id": 1, "image_id": 1, "category_id": 1,
                      "bbox": [90, 10, 13, 20]}],
        categories=[{"id": 1, "name": "plane"}],
    )
    ds = load_dataset(path, tmp_path)
    ann = ds.images[0].annotations[0]
    assert ann.box == (90, 10, 10, 20)
    assert ann.x + ann.w == 100


def test_malformed_file_names_record(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 100, "height": 100}],
        annotations=[{"id": 7, "image_id": 99, "category_id": 1, "bbox": [0, 0, 5, 5]}],
        categories=[{"id": 1, "name": "plane"}],
    )
    with pytest.raises(DatasetFormatError, match="99"):
        load_dataset(path, tmp_path)


def test_unknown_category_rejected(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 10, "height": 10}],
        annotations=[{"id": 1, "image_id": 1, "category_id": 5, "bbox": [0, 0, 5, 5]}],
        categories=[{"id": 1, "name": "plane"}],
    )
    with pytest.raises(DatasetFormatError, match="category"):
        load_dataset(path, tmp_path)


def test_missing_image_file_deferred(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 10, "height": 10, "file_name": "nope.png"}],
        annotations=[],
        categories=[{"id": 1, "name": "plane"}],
    )
    ds = load_dataset(path, tmp_path)  # loads fine
    with pytest.raises(FileNotFoundError):
        _ = ds.images[0].pixels


def test_save_load_round_trip(tmp_path):
    rec = make_record(1, 64, 48, [(4, 5, 10, 12, 1), (20, 20, 8, 8, 2)])
    ds = Dataset(images=[rec], categories=dict(CATEGORIES))
    out = tmp_path / "out"
    save_dataset(ds, out)
    back = load_dataset(out / "annotations.json", out / "images")
    assert len(back) == 1
    assert [a.box for a in back.images[0].annotations] == \
        [a.box for a in ds.images[0].annotations]
    assert [a.category for a in back.images[0].annotations] == [1, 2]
    # second round trip is byte-stable
    out2 = tmp_path / "out2"
    save_dataset(back, out2)
    assert (out / "annotations.json").read_bytes() == (out2 / "annotations.json").read_bytes()


def test_save_empty_dataset(tmp_path):
    ds = Dataset(images=[], categories={})
    save_dataset(ds, tmp_path / "empty")
    data = json.loads((tmp_path / "empty" / "annotations.json").read_text())
    assert data["images"] == [] and data["annotations"] == []


def test_categories_preserved_order_independently(tmp_path):
    path = write_coco(
        tmp_path,
        images=[{"id": 1, "width": 10, "height": 10, "file_name": "a.png"}],
        annotations=[],
        categories=[{"id": 2, "name": "ship"}, {"id": 1, "name": "plane"}],
    )
    ds = load_dataset(path, tmp_path)
    assert ds.categories == {1: "plane", 2: "ship"}


def test_density_no_annotations():
    rec = make_record(1, 32, 32)
    assert object_density(rec) == 0.0


def test_density_full_cover():
    rec = make_record(1, 32, 32, [(0, 0, 32, 32, 1)])
    assert object_density(rec) == 1.0


def test_density_inclusion_exclusion():
    rec = make_record(1, 100, 100, [(0, 0, 10, 10, 1), (5, 5, 10, 10, 1)])
    assert object_density(rec) == pytest.approx(0.0175, abs=0)


def test_density_matches_geometric_union_oracle():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = int(rng.integers(0, 8))
        boxes = []
        for _ in range(n):
            w = int(rng.integers(1, 40))
            h = int(rng.integers(1, 40))
            x = int(rng.integers(0, 100 - w))
            y = int(rng.integers(0, 100 - h))
            boxes.append((x, y, w, h, 1))
        rec = make_record(1, 100, 100, boxes)
        geo = union_area_geometric([b[:4] for b in boxes]) / (100 * 100)
        assert object_density(rec) == pytest.approx(geo, abs=1e-12)


def test_density_stats_mean():
    recs = [make_record(1, 10, 10), make_record(2, 10, 10, [(0, 0, 10, 10, 1)])]
    ds = Dataset(images=recs, categories=dict(CATEGORIES))
    stats = density_stats(ds)
    assert stats.mean == pytest.approx(0.5)
    assert stats.median == pytest.approx(0.5)


def test_density_stats_empty():
    ds = Dataset(images=[], categories={})
    stats = density_stats(ds)
    assert stats.mean is None and stats.median is None
    assert sum(stats.hist_counts) == 0


def test_density_stats_histogram_recount():
    ds = make_sparse_corpus(seed=5, n_images=10, size=128, box_px=(6, 20))
    stats = density_stats(ds)
    assert sum(stats.hist_counts) == 10
    for rec, (rid, d) in zip(ds.images, stats.densities):
        oracle = rasterized_density(rec.width, rec.height,
                                    [a.box for a in rec.annotations])
        assert d == oracle
        assert rid == rec.id


def test_no_annotation_violates_bounds_after_load(tmp_path):
    ds = make_sparse_corpus(seed=9, n_images=4, size=64, box_px=(4, 16))
    out = tmp_path / "rt"
    save_dataset(ds, out)
    back = load_dataset(out / "annotations.json", out / "images")
    for rec in back.images:
        for ann in rec.annotations:
            assert 0 <= ann.x and 0 <= ann.y
            assert ann.x + ann.w <= rec.width
            assert ann.y + ann.h <= rec.height
            assert ann.w > 0 and ann.h > 0


def test_duplicate_image_id_rejected():
    with pytest.raises(DatasetFormatError, match="duplicate"):
        Dataset(images=[make_record(1, 8, 8), make_record(1, 8, 8)],
                categories=dict(CATEGORIES))


def test_boxes_mask_half_open():
    mask = boxes_mask(10, 10, [BBoxAnnotation(2, 3, 4, 5, 1, 1)])
    assert mask[3, 2] and mask[7, 5]
    assert not mask[3, 6] and not mask[8, 2]
    assert int(mask.sum()) == 20

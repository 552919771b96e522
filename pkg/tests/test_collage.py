from __future__ import annotations

import numpy as np
import pytest

from collagekit.collage import (
    PROFILES,
    CollageConfig,
    Margins,
    UnsatisfiableSelectionError,
    bbox_paste_augment,
    build_corner_grid,
    collage_augment,
    generate_collage_dataset,
    mosaic_augment,
    paste_block,
    read_paste_logs,
    rotate_source,
    select_source_annotation,
    tile_edges,
    try_expand_block,
    write_paste_logs,
)
from collagekit.dataset import BBoxAnnotation, Dataset, object_density
from conftest import CATEGORIES, make_record, make_sparse_corpus
from oracles import (
    audit_collage_log,
    pairwise_intersection_area,
    rasterized_density,
    rotate_box_via_mask,
)


def test_corner_grid_full():
    rec = make_record(1, 100, 100)
    grid = build_corner_grid(rec, 25)
    assert len(grid.active) == 25
    assert set(grid.active) == {(x, y) for x in range(0, 101, 25)
                                for y in range(0, 101, 25)}


def test_corner_grid_excludes_covered():
    rec = make_record(1, 100, 100, [(0, 0, 30, 30, 1)])
    grid = build_corner_grid(rec, 25)
    assert len(grid.active) == 21
    for c in ((0, 0), (0, 25), (25, 0), (25, 25)):
        assert c not in grid.active


def test_corner_grid_small_image():
    rec = make_record(1, 10, 10)
    grid = build_corner_grid(rec, 25)
    assert grid.active == [(0, 0)]


def test_select_uniform_over_annotations():
    a = make_record(1, 50, 50, [(0, 0, 5, 5, 1)])
    b = make_record(2, 50, 50, [(0, 0, 5, 5, 1), (10, 10, 5, 5, 1), (20, 20, 5, 5, 1)])
    ds = Dataset(images=[a, b], categories=dict(CATEGORIES))
    rng = np.random.default_rng(123)
    draws = 100_000
    hits_b = sum(select_source_annotation(ds, rng)[0].id == 2 for _ in range(draws))
    assert abs(hits_b / draws - 0.75) < 0.01


def test_select_single_annotation():
    a = make_record(1, 50, 50, [(3, 4, 5, 6, 2)])
    ds = Dataset(images=[a], categories=dict(CATEGORIES))
    rng = np.random.default_rng(0)
    for _ in range(10):
        rec, ann = select_source_annotation(ds, rng)
        assert rec.id == 1 and ann.box == (3, 4, 5, 6)


def test_select_empty_pool_raises():
    ds = Dataset(images=[make_record(1, 50, 50)], categories=dict(CATEGORIES))
    with pytest.raises(UnsatisfiableSelectionError):
        select_source_annotation(ds, np.random.default_rng(0))


def test_rotate_identity():
    rng = np.random.default_rng(1)
    rec = make_record(1, 40, 30, [(5, 5, 10, 8, 1)], rng=rng)
    out = rotate_source(rec, 0)
    assert np.array_equal(out.pixels, rec.pixels)
    assert out.annotations[0].box == rec.annotations[0].box


def test_rotate_quarter_turn_box():
    rec = make_record(1, 100, 50, [(10, 5, 20, 10, 1)])
    out = rotate_source(rec, 1)
    assert (out.width, out.height) == (50, 100)
    assert out.annotations[0].box == (35, 10, 10, 20)
    # the frozen value also comes out of the mask-rotation oracle
    assert rotate_box_via_mask((10, 5, 20, 10), 100, 50, 1) == (35, 10, 10, 20)


def test_rotate_pixels_match_rot90():
    rng = np.random.default_rng(2)
    rec = make_record(1, 16, 12, rng=rng)
    for q in range(4):
        out = rotate_source(rec, q)
        assert np.array_equal(out.pixels, np.rot90(rec.pixels, k=-q))


def test_rotate_boxes_match_mask_oracle():
    rng = np.random.default_rng(3)
    for _ in range(25):
        w, h = int(rng.integers(8, 40)), int(rng.integers(8, 40))
        bw, bh = int(rng.integers(1, w + 1)), int(rng.integers(1, h + 1))
        x, y = int(rng.integers(0, w - bw + 1)), int(rng.integers(0, h - bh + 1))
        rec = make_record(1, w, h, [(x, y, bw, bh, 1)])
        q = int(rng.integers(0, 4))
        out = rotate_source(rec, q)
        assert out.annotations[0].box == rotate_box_via_mask((x, y, bw, bh), w, h, q)


def test_rotate_four_times_is_identity():
    rng = np.random.default_rng(4)
    rec = make_record(1, 30, 20, [(2, 3, 7, 5, 1)], rng=rng)
    out = rec
    for _ in range(4):
        out = rotate_source(out, 1)
    assert np.array_equal(out.pixels, rec.pixels)
    assert out.annotations[0].box == rec.annotations[0].box


def test_expand_block_on_blank_target():
    target = make_record(1, 512, 512)
    bbox = BBoxAnnotation(100, 100, 50, 50, 1, 2)
    cfg = PROFILES["rareplanes"]
    rng = np.random.default_rng(5)
    margins = try_expand_block(target, bbox, (0, 0), cfg, rng)
    assert margins is not None
    for m in margins:
        assert 0 <= m <= cfg.max_dilation
    assert 50 + margins.left + margins.right <= 512
    assert 50 + margins.top + margins.bottom <= 512


def test_expand_block_no_fit_when_covered():
    target = make_record(1, 100, 100, [(0, 0, 100, 100, 1)])
    bbox = BBoxAnnotation(0, 0, 10, 10, 1, 2)
    cfg = CollageConfig(occlusion_tol=0, min_step=1, max_step=5)
    margins = try_expand_block(target, bbox, (0, 0), cfg, np.random.default_rng(6))
    assert margins is None


def test_expand_block_zero_attempts():
    target = make_record(1, 100, 100)
    bbox = BBoxAnnotation(0, 0, 10, 10, 1, 2)
    cfg = CollageConfig(max_expansions=0)
    margins = try_expand_block(target, bbox, (25, 25), cfg, np.random.default_rng(7))
    assert margins is None


def _source_with_boxes():
    rng = np.random.default_rng(8)
    return make_record(9, 120, 120,
                       [(40, 40, 20, 20, 1),   # seed
                        (62, 40, 20, 20, 2),   # right neighbour
                        (10, 10, 10, 10, 1)],  # far corner
                       rng=rng)


def test_paste_block_zero_margins():
    src = _source_with_boxes()
    target = make_record(1, 200, 200)
    seed = src.annotations[0]
    imported, region = paste_block(target, src, seed, (50, 75), Margins(), 50.0)
    assert region == (40, 40, 20, 20)
    assert [i.target_box for i in imported] == [(50, 75, 20, 20)]
    assert np.array_equal(target.pixels[75:95, 50:70],
                          src.pixels[40:60, 40:60])
    assert len(target.annotations) == 1


def test_paste_block_threshold_filters_partial_box():
    # neighbour at (62,40,20,20): margins of 10 to the right cover x in
    # [30,70) -> 8 of 20 columns inside = 40% < 50 -> not imported
    src = _source_with_boxes()
    target = make_record(1, 200, 200)
    seed = src.annotations[0]
    m = Margins(left=10, top=0, right=10, bottom=0)
    imported, region = paste_block(target, src, seed, (0, 0), m, 50.0)
    assert region == (30, 40, 40, 20)
    cats = sorted(i.category for i in imported)
    assert cats == [1]
    # at threshold 40 the neighbour makes the cut, clipped to the region
    target2 = make_record(1, 200, 200)
    imported2, _ = paste_block(target2, src, seed, (0, 0), m, 40.0)
    assert sorted(i.category for i in imported2) == [1, 2]
    clipped = [i for i in imported2 if i.category == 2][0]
    assert clipped.target_box == (62 - 30, 0, 8, 20)


def test_paste_block_full_containment_translates():
    src = _source_with_boxes()
    target = make_record(1, 300, 300)
    seed = src.annotations[0]
    m = Margins(left=30, top=30, right=0, bottom=0)
    imported, region = paste_block(target, src, seed, (100, 150), m, 50.0)
    assert region == (10, 10, 50, 50)
    far = [i for i in imported if i.source_box == (10, 10, 10, 10)][0]
    assert far.target_box == (100, 150, 10, 10)


def test_paste_block_clips_margins_to_source():
    src = _source_with_boxes()
    target = make_record(1, 300, 300)
    seed = src.annotations[0]
    m = Margins(left=500, top=500, right=500, bottom=500)
    imported, region = paste_block(target, src, seed, (0, 0), m, 50.0)
    assert region == (0, 0, 120, 120)   # whole source, no further
    assert len(imported) == 3


def test_paste_block_out_of_bounds_is_internal_error():
    src = _source_with_boxes()
    target = make_record(1, 30, 30)
    with pytest.raises(ValueError, match="bounds"):
        paste_block(target, src, src.annotations[0], (20, 20), Margins(), 50.0)


def test_collage_zero_pastes_when_dense():
    base = make_record(1, 64, 64, [(0, 0, 64, 64, 1)])
    ds = Dataset(images=[base, make_record(2, 64, 64, [(5, 5, 10, 10, 1)])],
                 categories=dict(CATEGORIES))
    cfg = CollageConfig(target_density=(0.05, 0.5), min_size=16)
    rec, log = collage_augment(base, ds, cfg, np.random.default_rng(9))
    assert log.entries == []
    assert log.termination == "density-reached"
    assert object_density(rec) == 1.0


def test_collage_deterministic():
    ds = make_sparse_corpus(seed=11, n_images=5, size=128, box_px=(8, 24))
    cfg = CollageConfig(target_density=(0.05, 0.3), min_size=16, max_dilation=128,
                        max_expansions=40, seed=21)
    a, log_a = collage_augment(ds.images[0], ds, cfg, np.random.default_rng(99))
    b, log_b = collage_augment(ds.images[0], ds, cfg, np.random.default_rng(99))
    assert np.array_equal(a.pixels, b.pixels)
    assert [x.box for x in a.annotations] == [x.box for x in b.annotations]
    assert log_a == log_b


def test_collage_density_lift_and_audit():
    ds = make_sparse_corpus(seed=12, n_images=6, size=256, box_px=(8, 24))
    cfg = CollageConfig(target_density=(0.05, 0.4), min_size=25, max_dilation=256,
                        max_expansions=60, occlusion_tol=20, seed=3)
    rng = np.random.default_rng(13)
    natural = np.mean([object_density(r) for r in ds.images])
    assert natural < 0.02
    dims_by_id = {r.id: (r.width, r.height) for r in ds.images}
    lifted = []
    for i in range(10):
        base = ds.images[i % len(ds.images)]
        rec, log = collage_augment(base, ds, cfg, rng, out_id=1000 + i)
        d = rasterized_density(rec.width, rec.height,
                               [a.box for a in rec.annotations])
        lifted.append(d)
        assert d == log.final_density
        assert d >= log.target_density or log.exhausted
        violations = audit_collage_log(log, [a.box for a in base.annotations],
                                       (base.width, base.height), cfg, dims_by_id)
        assert violations == []
    assert np.mean(lifted) > natural


def test_collage_blank_canvas_mode():
    ds = make_sparse_corpus(seed=14, n_images=4, size=128, box_px=(8, 20))
    cfg = CollageConfig(target_density=(0.02, 0.1), min_size=16,
                        max_dilation=64, max_expansions=30,
                        base_mode="blank-canvas")
    rec, log = collage_augment(ds.images[0], ds, cfg, np.random.default_rng(15))
    assert log.entries  # something was pasted
    assert rec.annotations  # imports only, no inherited base boxes
    assert all(a.source_image == rec.id for a in rec.annotations)
    # pixels outside every pasted block keep the canvas fill
    pasted = np.zeros((rec.height, rec.width), dtype=bool)
    for e in log.entries:
        cx, cy = e.corner
        _, _, rw, rh = e.region
        pasted[cy:cy + rh, cx:cx + rw] = True
    untouched = rec.pixels[~pasted]
    assert untouched.size > 0
    assert (untouched == cfg.canvas_fill).all()


def test_generate_counts_and_workers_agree():
    ds = make_sparse_corpus(seed=16, n_images=5, size=96, box_px=(6, 18))
    cfg = CollageConfig(target_density=(0.03, 0.15), min_size=16,
                        max_dilation=96, max_expansions=25, seed=77)
    logs1, logs2 = [], []
    out1 = generate_collage_dataset(ds, cfg, epochs=2, workers=1, logs=logs1)
    out2 = generate_collage_dataset(ds, cfg, epochs=2, workers=3, logs=logs2)
    assert len(out1.images) == 10 and len(out2.images) == 10
    for r1, r2 in zip(out1.images, out2.images):
        assert r1.id == r2.id and r1.file_name == r2.file_name
        assert np.array_equal(r1.pixels, r2.pixels)
        assert [a.box for a in r1.annotations] == [a.box for a in r2.annotations]
    assert logs1 == logs2


def test_paste_log_round_trip(tmp_path):
    ds = make_sparse_corpus(seed=17, n_images=4, size=96, box_px=(6, 18))
    cfg = CollageConfig(target_density=(0.03, 0.12), min_size=16,
                        max_dilation=96, max_expansions=25, seed=5)
    logs = []
    generate_collage_dataset(ds, cfg, epochs=1, workers=1, logs=logs)
    path = tmp_path / "paste_log.jsonl"
    write_paste_logs(logs, path)
    back = read_paste_logs(path)
    assert back == logs


def test_mosaic_identity_grid():
    ds = make_sparse_corpus(seed=18, n_images=3, size=64, box_px=(6, 16))
    rng = np.random.default_rng(19)
    out = mosaic_augment(ds, (1, 1), rng)
    src = [r for r in ds.images if r.id == out.id][0]
    assert np.array_equal(out.pixels, src.pixels)
    assert [a.box for a in out.annotations] == [a.box for a in src.annotations]


def test_mosaic_2x2_partition():
    ds = make_sparse_corpus(seed=20, n_images=4, size=512, box_px=(10, 30))
    assert tile_edges(512, 2) == [0, 256, 512]
    out = mosaic_augment(ds, (2, 2), np.random.default_rng(21))
    assert (out.width, out.height) == (512, 512)


@pytest.mark.parametrize("gi", [1, 2, 3, 4])
@pytest.mark.parametrize("gj", [1, 2, 3, 4])
def test_mosaic_tiles_partition_exactly(gi, gj):
    xs = tile_edges(100, gi)
    ys = tile_edges(97, gj)
    cover = np.zeros((97, 100), dtype=int)
    for a in range(gi):
        for b in range(gj):
            cover[ys[b]:ys[b + 1], xs[a]:xs[a + 1]] += 1
    assert (cover == 1).all()


def test_mosaic_pixels_come_from_matching_tiles():
    # distinct constant fills reveal which source owns each tile
    recs = [make_record(i + 1, 60, 60, fill=40 * (i + 1)) for i in range(4)]
    ds = Dataset(images=recs, categories=dict(CATEGORIES))
    out = mosaic_augment(ds, (3, 2), np.random.default_rng(22))
    xs, ys = tile_edges(60, 3), tile_edges(60, 2)
    for a in range(3):
        for b in range(2):
            tile = out.pixels[ys[b]:ys[b + 1], xs[a]:xs[a + 1]]
            assert len(np.unique(tile)) == 1
            assert int(tile[0, 0, 0]) in (40, 80, 120, 160)


def test_bbox_paste_count_zero():
    ds = make_sparse_corpus(seed=23, n_images=3, size=64, box_px=(6, 16))
    target = make_record(50, 64, 64)
    out, skipped = bbox_paste_augment(target, ds, 0, np.random.default_rng(24))
    assert np.array_equal(out.pixels, target.pixels)
    assert out.annotations == [] and skipped == 0


def test_bbox_paste_single_density():
    src = make_record(1, 64, 64, [(10, 10, 16, 8, 1)])
    ds = Dataset(images=[src], categories=dict(CATEGORIES))
    target = make_record(2, 64, 64)
    out, skipped = bbox_paste_augment(target, ds, 1, np.random.default_rng(25))
    assert skipped == 0
    assert object_density(out) == (16 * 8) / (64 * 64)


def test_bbox_paste_five_disjoint():
    ds = make_sparse_corpus(seed=26, n_images=4, size=96, box_px=(6, 14))
    target = make_record(60, 96, 96)
    out, skipped = bbox_paste_augment(target, ds, 5, np.random.default_rng(27))
    assert skipped == 0
    assert len(out.annotations) == 5
    assert pairwise_intersection_area([a.box for a in out.annotations]) == 0


def test_bbox_paste_reports_skips():
    src = make_record(1, 64, 64, [(0, 0, 60, 60, 1)])
    ds = Dataset(images=[src], categories=dict(CATEGORIES))
    target = make_record(2, 64, 64)
    out, skipped = bbox_paste_augment(target, ds, 3, np.random.default_rng(28))
    assert len(out.annotations) + skipped == 3
    assert skipped >= 2  # a 60x60 chip fits at most once without overlap


def test_generate_names_failing_sample(tmp_path):
    ds = make_sparse_corpus(seed=29, n_images=2, size=64, box_px=(6, 14))
    # second record points at a file that is not there
    broken = ds.images[1]
    broken._pixels = None
    broken.path = tmp_path / "gone.png"
    cfg = CollageConfig(target_density=(0.03, 0.1), min_size=16,
                        max_dilation=64, max_expansions=10, seed=1)
    with pytest.raises(RuntimeError, match=r"epoch 0, index 1"):
        generate_collage_dataset(ds, cfg, epochs=1, workers=1)


def test_collage_config_validation():
    with pytest.raises(ValueError):
        CollageConfig(target_density=(0.5, 0.1))
    with pytest.raises(ValueError):
        CollageConfig(min_step=10, max_step=5)
    with pytest.raises(ValueError):
        CollageConfig(bbox_threshold=0)
    with pytest.raises(ValueError):
        CollageConfig(base_mode="nope")

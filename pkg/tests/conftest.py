from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from collagekit.dataset import BBoxAnnotation, Dataset, ImageRecord, save_dataset

CATEGORIES = {1: "plane", 2: "ship"}

# filled by test_acceptance's criterion() wrapper; printed after the run
ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, ok in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(
                f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}")


def make_record(rec_id, width, height, boxes=(), rng=None, fill=100):
    rec = ImageRecord(id=rec_id, width=width, height=height)
    if rng is None:
        pixels = np.full((height, width, 3), fill, dtype=np.uint8)
    else:
        pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    rec.set_pixels(pixels)
    for (x, y, w, h, cat) in boxes:
        rec.annotations.append(BBoxAnnotation(x, y, w, h, cat, rec_id))
    return rec


def make_sparse_corpus(seed=0, n_images=10, size=512, boxes_per_image=(2, 5),
                       box_px=(12, 48)):
    """In-memory corpus with textured pixels and union density well under 2%."""
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n_images):
        boxes = []
        for _ in range(int(rng.integers(boxes_per_image[0], boxes_per_image[1] + 1))):
            w = int(rng.integers(box_px[0], box_px[1] + 1))
            h = int(rng.integers(box_px[0], box_px[1] + 1))
            x = int(rng.integers(0, size - w + 1))
            y = int(rng.integers(0, size - h + 1))
            boxes.append((x, y, w, h, int(rng.choice(list(CATEGORIES)))))
        images.append(make_record(i + 1, size, size, boxes, rng=rng))
    return Dataset(images=images, categories=dict(CATEGORIES))


@pytest.fixture
def sparse_corpus():
    return make_sparse_corpus(seed=7, n_images=10, size=512)


@pytest.fixture
def small_corpus():
    return make_sparse_corpus(seed=3, n_images=6, size=96, box_px=(8, 20))


@pytest.fixture
def corpus_dir(tmp_path, small_corpus):
    """The small corpus persisted to disk as a COCO-style directory."""
    out = tmp_path / "corpus"
    save_dataset(small_corpus, out)
    return out


def make_mixer_dir(path: Path, n=3, size=64, seed=11):
    """Directory of pseudo-fractal mixer images."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    path.mkdir(parents=True, exist_ok=True)
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(n):
        fx, fy = rng.uniform(0.05, 0.4, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        chans = [np.sin(fx * xx * (k + 1) + phase[k]) * np.cos(fy * yy + phase[k])
                 for k in range(3)]
        arr = np.stack(chans, axis=-1)
        arr = ((arr - arr.min()) / (np.ptp(arr) + 1e-9) * 255).astype(np.uint8)
        Image.fromarray(arr).save(path / f"mixer_{i:02d}.png")
    return path


@pytest.fixture
def mixer_dir(tmp_path):
    return make_mixer_dir(tmp_path / "mixers")

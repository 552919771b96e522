from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from collagekit_bridge import ArrayImage

PARITY_RESULTS: list[tuple[str, bool]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if PARITY_RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, ok in PARITY_RESULTS:
            terminalreporter.write_line(
                f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}")


def make_array_image(rng, size=48, n_boxes=(1, 3), box_px=(6, 14)) -> ArrayImage:
    pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    boxes = []
    for _ in range(int(rng.integers(n_boxes[0], n_boxes[1] + 1))):
        w = int(rng.integers(box_px[0], box_px[1] + 1))
        h = int(rng.integers(box_px[0], box_px[1] + 1))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        boxes.append((x, y, w, h, int(rng.integers(1, 3))))
    return ArrayImage(pixels=pixels, boxes=boxes)


def make_batch(seed, n=4, size=48) -> list[ArrayImage]:
    rng = np.random.default_rng(seed)
    return [make_array_image(rng, size=size) for _ in range(n)]


@pytest.fixture
def mixer_dir(tmp_path):
    rng = np.random.default_rng(5)
    d = tmp_path / "mixers"
    d.mkdir()
    yy, xx = np.mgrid[0:40, 0:40]
    for i in range(3):
        fx, fy = rng.uniform(0.05, 0.5, size=2)
        arr = np.sin(fx * xx + i) * np.cos(fy * yy - i)
        arr = np.stack([arr, np.roll(arr, i + 1, 0), arr.T], axis=-1)
        arr = ((arr - arr.min()) / (np.ptp(arr) + 1e-9) * 255).astype(np.uint8)
        Image.fromarray(arr).save(d / f"frac_{i}.png")
    return d

"""Array-in/array-out facade over the collagekit engine.

Training pipelines hand in pixel arrays plus box lists and get augmented
arrays back, bit-identical to what the engine's dataset generators produce
under the same seed. Everything delegates to the primary engine; nothing is
reimplemented here. Calls are independent (per-call seeds) and safe to issue
from multiple host threads; the heavy pixel work happens inside numpy/OpenCV,
which drop the interpreter lock.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from collagekit import (
    BBoxAnnotation,
    CorruptionSpec,
    Dataset,
    ImageRecord,
    collage_augment,
    corrupt_image,
    load_mixers,
    pixmix_augment,
    sample_rng,
)
from collagekit.config import build_collage_config, build_pixmix_config
from collagekit.corruption import CORRUPTION_KINDS

__version__ = "0.1.0"

__all__ = ["ArrayImage", "py_collage", "py_pixmix", "py_corrupt", "generate",
           "__version__"]

Box = tuple[int, int, int, int, int]   # x, y, w, h, category


@dataclass
class ArrayImage:
    """H x W x 3 uint8 pixel array plus (x, y, w, h, category) boxes."""
    pixels: np.ndarray
    boxes: list[Box] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be H x W x 3, got {self.pixels.shape}")
        h, w = self.pixels.shape[:2]
        self.boxes = [tuple(int(v) for v in box) for box in self.boxes]
        for box in self.boxes:
            x, y, bw, bh, _ = box
            if bw <= 0 or bh <= 0 or x < 0 or y < 0 or x + bw > w or y + bh > h:
                raise ValueError(f"box {box} outside {w}x{h} image bounds")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _to_record(image: ArrayImage, record_id) -> ImageRecord:
    rec = ImageRecord(id=record_id, width=image.width, height=image.height)
    rec.set_pixels(image.pixels)
    rec.annotations = [BBoxAnnotation(x, y, w, h, cat, record_id)
                       for (x, y, w, h, cat) in image.boxes]
    return rec


def _from_record(rec: ImageRecord) -> ArrayImage:
    return ArrayImage(pixels=np.ascontiguousarray(rec.pixels),
                      boxes=[(a.x, a.y, a.w, a.h, a.category)
                             for a in rec.annotations])


def _as_array_image(image) -> ArrayImage:
    if isinstance(image, ArrayImage):
        return image
    return ArrayImage(pixels=np.asarray(image))


def _stringify(config: dict | None) -> dict[str, str]:
    kv = {}
    for key, value in (config or {}).items():
        if isinstance(value, (tuple, list)):
            kv[key] = " ".join(str(v) for v in value)
        else:
            kv[key] = str(value)
    return kv


def py_collage(samples, config: dict | None = None, seed: int = 0) -> ArrayImage:
    """Collage-augment the first sample of the batch, drawing paste sources
    from the whole batch.

    Matches the engine's output for sample (epoch 0, index 0) of a run over
    the same batch with the same seed, bit for bit.
    """
    samples = [_as_array_image(s) for s in samples]
    if not samples:
        raise ValueError("need at least one sample")
    records = [_to_record(img, i + 1) for i, img in enumerate(samples)]
    categories = sorted({cat for img in samples for (_, _, _, _, cat) in img.boxes})
    if not categories:
        raise ValueError("batch carries no annotations to paste from")
    dataset = Dataset(images=records,
                      categories={cid: f"category-{cid}" for cid in categories})
    cfg = build_collage_config(_stringify(config), None, seed=int(seed))
    rng = sample_rng(cfg.seed, 0, 0)
    out, _ = collage_augment(records[0], dataset, cfg, rng, out_id=1)
    return _from_record(out)


def py_pixmix(image, mixer_dir: str | Path, config: dict | None = None,
              seed: int = 0) -> ArrayImage:
    """Blend one image with the mixer directory; boxes pass through. Matches
    the engine's blended sample (epoch 0, index 0) under the same seed."""
    img = _as_array_image(image)
    mixers = load_mixers(mixer_dir)
    cfg = build_pixmix_config(_stringify(config), seed=int(seed))
    rec = pixmix_augment(_to_record(img, 1), mixers, cfg,
                         sample_rng(cfg.seed, 0, 0))
    return _from_record(rec)


def py_corrupt(image, kind: str, severity: int, seed: int = 0) -> ArrayImage:
    """Apply one corruption cell; matches the engine's grid output for the
    first image of a dataset under the same seed."""
    img = _as_array_image(image)
    spec = CorruptionSpec(kind, severity)   # names valid kinds on error
    rng = sample_rng(int(seed), CORRUPTION_KINDS.index(kind), severity, 0)
    rec = corrupt_image(_to_record(img, 1), spec, rng)
    return _from_record(rec)


def generate(annotations: str | Path, out_dir: str | Path, mode: str = "collage",
             config: dict | None = None, image_root: str | Path | None = None,
             mixer_dir: str | Path | None = None, epochs: int = 1,
             workers: int = 1, seed: int = 0) -> int:
    """Dataset-level generation mirroring the augment command; returns its
    exit status."""
    from collagekit.cli import main as cli_main

    argv = ["augment", "--mode", mode, "--in", str(annotations),
            "--out", str(out_dir), "--epochs", str(int(epochs)),
            "--workers", str(int(workers)), "--seed", str(int(seed))]
    if image_root is not None:
        argv += ["--image-root", str(image_root)]
    if mixer_dir is not None:
        argv += ["--mixer-dir", str(mixer_dir)]
    for key, value in _stringify(config).items():
        flag = {"TargetDensity": "--target-density", "MinSize": "--min-size",
                "MaxDilation": "--max-dilation", "MaxExpansions": "--max-expansions",
                "MinStep": "--min-step", "MaxStep": "--max-step",
                "OcclusionTol": "--occlusion-tol", "BBoxThreshold": "--bbox-threshold",
                "base_mode": "--base-mode", "MaxRounds": "--max-rounds",
                "BlendStrength": "--blend-strength"}.get(key)
        if flag is None:
            raise ValueError(f"unknown config key {key!r}")
        argv += [flag] + str(value).split()
    return cli_main(argv)

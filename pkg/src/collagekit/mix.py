"""Pixel-only blending with fractal mixer images, and the two ways of
combining it with collage pasting: a single sequential pass, or two staged
datasets for hierarchical pre-train / fine-tune.

Blending never touches annotations. Each round mixes the working image with a
mixer image, additively or multiplicatively, in a normalized pixel space with
beta-distributed weights, clipping back to [0, 1] after every round.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .collage import CollageConfig, PasteLog, generate_collage_dataset
from .dataset import BBoxAnnotation, Dataset, ImageRecord, save_dataset
from .parallel import deterministic_map, sample_rng

log = logging.getLogger(__name__)

BLEND_OPS = ("additive", "multiplicative")


class MixerConfigError(ValueError):
    """Mixer directory unusable (missing or without decodable images)."""


@dataclass(frozen=True)
class PixMixConfig:
    max_rounds: int = 4
    blend_strength: float = 3.0
    ops: tuple[str, ...] = BLEND_OPS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.blend_strength <= 0:
            raise ValueError("blend_strength must be > 0")
        if not self.ops or any(op not in BLEND_OPS for op in self.ops):
            raise ValueError(f"ops must be a non-empty subset of {BLEND_OPS}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class MixerSet:
    directory: Path
    files: list[Path]
    skipped: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.files)

    def load(self, index: int) -> np.ndarray:
        if index not in self._cache:
            with Image.open(self.files[index]) as im:
                self._cache[index] = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return self._cache[index]


def load_mixers(directory: Path | str) -> MixerSet:
    """Index the mixer images in ``directory`` in lexicographic order,
    skipping files that do not decode."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MixerConfigError(f"mixer directory {directory} does not exist")
    files = []
    skipped = 0
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            with Image.open(path) as im:
                im.verify()
            files.append(path)
        except (UnidentifiedImageError, OSError):
            skipped += 1
            log.warning("skipping undecodable mixer file %s", path)
    if not files:
        raise MixerConfigError(f"mixer directory {directory} has no decodable images")
    return MixerSet(directory=directory, files=files, skipped=skipped)


def fit_mixer(mixer: np.ndarray, width: int, height: int) -> np.ndarray:
    """Center-crop the mixer to the target aspect ratio, then scale."""
    h, w = mixer.shape[:2]
    if (w, h) == (width, height):
        return mixer
    target_ratio = width / height
    if w / h > target_ratio:
        cw = max(1, round(h * target_ratio))
        x0 = (w - cw) // 2
        mixer = mixer[:, x0:x0 + cw]
    else:
        ch = max(1, round(w / target_ratio))
        y0 = (h - ch) // 2
        mixer = mixer[y0:y0 + ch]
    return cv2.resize(mixer, (width, height), interpolation=cv2.INTER_LINEAR)


def blend_weights(rng: np.random.Generator, strength: float) -> tuple[float, float]:
    """Mixing coefficients (a, b): either both from beta draws, or a pushed
    past 1 with b negative, so blends swing both toward and away from the
    mixer."""
    if rng.random() < 0.5:
        return float(rng.beta(strength, 1)), float(rng.beta(1, strength))
    return 1.0 + float(rng.beta(1, strength)), -float(rng.beta(1, strength))


def blend_additive(base: np.ndarray, mixer: np.ndarray,
                   a: float, b: float) -> np.ndarray:
    x = base * 2.0 - 1.0
    y = mixer * 2.0 - 1.0
    return ((a * x + b * y) + 1.0) / 2.0


def blend_multiplicative(base: np.ndarray, mixer: np.ndarray,
                         a: float, b: float) -> np.ndarray:
    x = base * 2.0
    y = np.clip(mixer * 2.0, 1e-37, None)
    return (x ** a) * (y ** b) / 2.0


_BLENDS = {"additive": blend_additive, "multiplicative": blend_multiplicative}


def pixmix_augment(record: ImageRecord, mixers: MixerSet, config: PixMixConfig,
                   rng: np.random.Generator, out_id=None) -> ImageRecord:
    """Blend the record's pixels with 0..max_rounds mixer images; the boxes
    come through untouched."""
    out = ImageRecord(id=out_id if out_id is not None else record.id,
                      width=record.width, height=record.height,
                      file_name=record.file_name)
    out.annotations = [BBoxAnnotation(a.x, a.y, a.w, a.h, a.category, out.id)
                       for a in record.annotations]
    rounds = int(rng.integers(0, config.max_rounds + 1))
    if rounds == 0:
        out.set_pixels(record.pixels.copy())
        return out
    x = record.pixels.astype(np.float64) / 255.0
    for _ in range(rounds):
        mixer_raw = mixers.load(int(rng.integers(len(mixers))))
        mixer = fit_mixer(mixer_raw, record.width, record.height)
        mixer = mixer.astype(np.float64) / 255.0
        op = config.ops[int(rng.integers(len(config.ops)))]
        a, b = blend_weights(rng, config.blend_strength)
        x = np.clip(_BLENDS[op](x, mixer, a, b), 0.0, 1.0)
    out.set_pixels(np.round(x * 255.0).astype(np.uint8))
    return out


def _pixmix_task(shared, item):
    dataset, mixers, config, n, prefix = shared
    epoch, index = item
    rng = sample_rng(config.seed, epoch, index)
    rec = pixmix_augment(dataset.images[index], mixers, config, rng,
                         out_id=epoch * n + index + 1)
    rec.file_name = f"{prefix}_e{epoch:03d}_i{index:05d}.png"
    return rec


def generate_pixmix_dataset(dataset: Dataset, mixers: MixerSet,
                            config: PixMixConfig, epochs: int,
                            workers: int = 1, prefix: str = "pixmix") -> Dataset:
    """epochs x len(dataset) blended copies; annotations preserved verbatim."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    n = len(dataset.images)
    items = [(e, i) for e in range(epochs) for i in range(n)]
    records = deterministic_map(_pixmix_task, items, workers,
                                shared=(dataset, mixers, config, n, prefix))
    return Dataset(images=records, categories=dict(dataset.categories))


def _colmix_task(shared, item):
    from .collage import collage_augment

    dataset, collage_cfg, mix_cfg, mixers, n = shared
    epoch, index = item
    out_id = epoch * n + index + 1
    # collage stream identical to a collage-only run; blend stage gets its own
    # stream (trailing tag) so one shared seed still decorrelates the stages
    collage_rng = sample_rng(collage_cfg.seed, epoch, index)
    rec, log_entry = collage_augment(dataset.images[index], dataset,
                                     collage_cfg, collage_rng, out_id=out_id)
    mix_rng = sample_rng(mix_cfg.seed, epoch, index, 1)
    mixed = pixmix_augment(rec, mixers, mix_cfg, mix_rng, out_id=out_id)
    mixed.file_name = f"colmix_e{epoch:03d}_i{index:05d}.png"
    return mixed, log_entry


def colmix_a_pipeline(dataset: Dataset, collage_cfg: CollageConfig,
                      mix_cfg: PixMixConfig, mixers: MixerSet, epochs: int,
                      workers: int = 1,
                      logs: list[PasteLog] | None = None) -> Dataset:
    """Sequential pass: every sample is collage-pasted, then blended.

    The collage stage draws from the same streams a collage-only run would,
    so both runs carry identical annotation sets.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    n = len(dataset.images)
    items = [(e, i) for e in range(epochs) for i in range(n)]
    results = deterministic_map(_colmix_task, items, workers,
                                shared=(dataset, collage_cfg, mix_cfg, mixers, n))
    if logs is not None:
        logs.extend(entry for _, entry in results)
    return Dataset(images=[rec for rec, _ in results],
                   categories=dict(dataset.categories))


def colmix_b_stage(dataset: Dataset, collage_cfg: CollageConfig,
                   mix_cfg: PixMixConfig, mixers: MixerSet, epochs: int,
                   workers: int = 1, out_dir: Path | str | None = None,
                   logs: list[PasteLog] | None = None) -> tuple[Dataset, Dataset]:
    """Two-stage emission: stage1 is collage-only, stage2 blends the original
    images without touching their annotations. With ``out_dir`` both stages
    are persisted under stage-tagged directories for an external trainer."""
    stage1 = generate_collage_dataset(dataset, collage_cfg, epochs,
                                      workers=workers, logs=logs)
    stage2 = generate_pixmix_dataset(dataset, mixers, mix_cfg, epochs,
                                     workers=workers)
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_dataset(stage1, out_dir / "stage1")
        save_dataset(stage2, out_dir / "stage2")
    return stage1, stage2

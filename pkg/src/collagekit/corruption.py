"""Corruption suite: 15 label-preserving corruption kinds at severities 1-5.

Severity constants follow the published robustness-benchmark tables for
natural images. Those constants target 224x224 inputs, so spatial parameters
(blur radii, displacement fields, pixelation block size) grow with the image
diagonal; the factor never drops below 1 so small images keep the reference
behavior. Annotations are copied verbatim: every kind leaves the ground truth
where it was, including the elastic warp.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, map_coordinates

from .dataset import (
    BBoxAnnotation,
    Dataset,
    ImageRecord,
    dataset_to_coco,
    encode_coco_json,
)
from .parallel import deterministic_map, sample_rng

CORRUPTION_KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise",
    "defocus_blur", "glass_blur", "motion_blur", "zoom_blur",
    "snow", "frost", "fog",
    "brightness", "contrast",
    "elastic_transform", "pixelate", "jpeg_compression",
)

SEVERITIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(
                f"unknown corruption kind {self.kind!r}; valid kinds: "
                f"{', '.join(CORRUPTION_KINDS)}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in {SEVERITIES}")


def _as_float(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) / 255.0

def _as_bytes(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)

def _spatial_scale(width: int, height: int) -> float:
    return max(1.0, math.hypot(width, height) / math.hypot(224, 224))


# ---------------------------------------------------------------- noise

_GAUSSIAN_SCALE = (0.08, 0.12, 0.18, 0.26, 0.38)
_SHOT_PHOTONS = (60, 25, 12, 5, 3)
_IMPULSE_AMOUNT = (0.03, 0.06, 0.09, 0.17, 0.27)


def add_gaussian_noise(pixels: np.ndarray, scale: float,
                       rng: np.random.Generator) -> np.ndarray:
    x = _as_float(pixels)
    return _as_bytes(x + rng.normal(size=x.shape, scale=scale) if scale > 0 else x)


def gaussian_noise(pixels, severity, rng):
    return add_gaussian_noise(pixels, _GAUSSIAN_SCALE[severity - 1], rng)


def shot_noise(pixels, severity, rng):
    c = _SHOT_PHOTONS[severity - 1]
    x = _as_float(pixels)
    return _as_bytes(rng.poisson(x * c) / c)


def impulse_noise(pixels, severity, rng):
    amount = _IMPULSE_AMOUNT[severity - 1]
    x = _as_float(pixels)
    r = rng.random(x.shape)
    x = x.copy()
    x[r < amount / 2] = 0.0
    x[r > 1 - amount / 2] = 1.0
    return _as_bytes(x)


# ---------------------------------------------------------------- blur

_DEFOCUS = ((3, 0.1), (4, 0.5), (6, 0.5), (8, 0.5), (10, 0.5))
_GLASS = ((0.7, 1, 2), (0.9, 2, 1), (1.0, 2, 3), (1.1, 3, 2), (1.5, 4, 2))
_MOTION = ((10, 3), (15, 5), (15, 8), (15, 12), (20, 15))
# constant step: widening the factor range must monotonically soften the image,
# which variable steps break by reweighting the sharp original
_ZOOM_STOPS = (1.11, 1.16, 1.21, 1.26, 1.31)


def _disk_kernel(radius: float, alias_blur: float) -> np.ndarray:
    reach = max(8, int(math.ceil(radius)))
    grid = np.arange(-reach, reach + 1)
    xs, ys = np.meshgrid(grid, grid)
    disk = ((xs ** 2 + ys ** 2) <= radius ** 2).astype(np.float64)
    disk /= disk.sum()
    ksize = (3, 3) if radius <= 8 else (5, 5)
    return cv2.GaussianBlur(disk, ksize=ksize, sigmaX=alias_blur)


def defocus_blur(pixels, severity, rng):
    radius, alias = _DEFOCUS[severity - 1]
    radius *= _spatial_scale(pixels.shape[1], pixels.shape[0])
    kernel = _disk_kernel(radius, alias)
    x = _as_float(pixels)
    out = np.stack([cv2.filter2D(x[:, :, c], -1, kernel) for c in range(3)], axis=-1)
    return _as_bytes(out)


def glass_blur(pixels, severity, rng):
    # blur, locally displace pixels with a random field, blur again
    sigma, delta, iters = _GLASS[severity - 1]
    s = _spatial_scale(pixels.shape[1], pixels.shape[0])
    sigma *= s
    delta = max(1, round(delta * s))
    h, w = pixels.shape[:2]
    x = gaussian_filter(_as_float(pixels), sigma=(sigma, sigma, 0))
    rows = np.arange(h)[:, None].repeat(w, axis=1)
    cols = np.arange(w)[None, :].repeat(h, axis=0)
    for _ in range(iters):
        dy = rng.integers(-delta, delta + 1, size=(h, w))
        dx = rng.integers(-delta, delta + 1, size=(h, w))
        sy = np.clip(rows + dy, 0, h - 1)
        sx = np.clip(cols + dx, 0, w - 1)
        x = x[sy, sx]
    x = gaussian_filter(x, sigma=(sigma, sigma, 0))
    return _as_bytes(x)


def _motion_kernel(radius: float, sigma: float, angle_deg: float) -> np.ndarray:
    half = max(1, int(math.ceil(radius)))
    size = 2 * half + 1
    line = np.zeros((size, size), dtype=np.float64)
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    line[half, :] = np.exp(-offsets ** 2 / (2 * max(sigma, 1e-6) ** 2))
    rot = cv2.getRotationMatrix2D((half, half), angle_deg, 1.0)
    kernel = cv2.warpAffine(line, rot, (size, size))
    total = kernel.sum()
    return kernel / total if total > 0 else line / line.sum()


def motion_blur(pixels, severity, rng):
    radius, sigma = _MOTION[severity - 1]
    s = _spatial_scale(pixels.shape[1], pixels.shape[0])
    angle = float(rng.uniform(-45, 45))
    kernel = _motion_kernel(radius * s, sigma * s, angle)
    x = _as_float(pixels)
    out = np.stack([cv2.filter2D(x[:, :, c], -1, kernel) for c in range(3)], axis=-1)
    return _as_bytes(out)


def _center_zoom(x: np.ndarray, factor: float) -> np.ndarray:
    h, w = x.shape[:2]
    ch = max(1, int(math.ceil(h / factor)))
    cw = max(1, int(math.ceil(w / factor)))
    top = (h - ch) // 2
    left = (w - cw) // 2
    crop = x[top:top + ch, left:left + cw]
    return cv2.resize(crop, (w, h), interpolation=cv2.INTER_LINEAR)


def zoom_blur(pixels, severity, rng):
    factors = np.arange(1.0, _ZOOM_STOPS[severity - 1], 0.01)
    x = _as_float(pixels)
    out = x.copy()
    for f in factors:
        out += _center_zoom(x, f)
    return _as_bytes(out / (len(factors) + 1))


# ---------------------------------------------------------------- weather

_SNOW = ((0.1, 0.3, 3.0, 0.5, 10, 4, 0.8),
         (0.2, 0.3, 2.0, 0.5, 12, 4, 0.7),
         (0.55, 0.3, 4.0, 0.9, 12, 8, 0.7),
         (0.55, 0.3, 4.5, 0.85, 12, 8, 0.65),
         (0.55, 0.3, 2.5, 0.85, 12, 12, 0.55))
_FROST = ((1.0, 0.4), (0.8, 0.6), (0.7, 0.7), (0.65, 0.7), (0.6, 0.75))
_FOG = ((1.5, 2.0), (2.0, 2.0), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4))


def plasma_fractal(rng: np.random.Generator, mapsize: int,
                   wibbledecay: float) -> np.ndarray:
    """Diamond-square heightmap in [0, 1]; mapsize must be a power of two."""
    assert mapsize & (mapsize - 1) == 0
    arr = np.empty((mapsize, mapsize), dtype=np.float64)
    arr[0, 0] = 0
    stepsize = mapsize
    wibble = 100.0

    def wibbledmean(block):
        return block / 4 + wibble * rng.uniform(-wibble, wibble, block.shape)

    while stepsize >= 2:
        half = stepsize // 2
        corners = arr[0:mapsize:stepsize, 0:mapsize:stepsize]
        acc = corners + np.roll(corners, -1, axis=0)
        acc += np.roll(acc, -1, axis=1)
        arr[half:mapsize:stepsize, half:mapsize:stepsize] = wibbledmean(acc)

        drgrid = arr[half:mapsize:stepsize, half:mapsize:stepsize]
        ulgrid = arr[0:mapsize:stepsize, 0:mapsize:stepsize]
        ldrsum = drgrid + np.roll(drgrid, 1, axis=0)
        lulsum = ulgrid + np.roll(ulgrid, -1, axis=1)
        arr[0:mapsize:stepsize, half:mapsize:stepsize] = wibbledmean(ldrsum + lulsum)
        tdrsum = drgrid + np.roll(drgrid, 1, axis=1)
        tulsum = ulgrid + np.roll(ulgrid, -1, axis=0)
        arr[half:mapsize:stepsize, 0:mapsize:stepsize] = wibbledmean(tdrsum + tulsum)

        stepsize //= 2
        wibble /= wibbledecay

    arr -= arr.min()
    return arr / arr.max()


def _plasma_for(width: int, height: int, rng, wibbledecay: float) -> np.ndarray:
    mapsize = 2 ** math.ceil(math.log2(max(width, height, 2)))
    return plasma_fractal(rng, mapsize, wibbledecay)[:height, :width]


def snow(pixels, severity, rng):
    loc, scale, zoom, thresh, radius, sigma, keep = _SNOW[severity - 1]
    h, w = pixels.shape[:2]
    s = _spatial_scale(w, h)
    x = _as_float(pixels)
    layer = rng.normal(size=(h, w), loc=loc, scale=scale)
    layer = _center_zoom(layer[:, :, None].repeat(3, axis=2), zoom)[:, :, 0]
    layer[layer < thresh] = 0.0
    angle = float(rng.uniform(-135, -45))
    kernel = _motion_kernel(radius * s, sigma * s, angle)
    layer = cv2.filter2D(layer, -1, kernel)[:, :, None]
    gray = cv2.cvtColor(x.astype(np.float32), cv2.COLOR_RGB2GRAY)
    gray = gray.astype(np.float64).reshape(h, w, 1)
    x = keep * x + (1 - keep) * np.maximum(x, gray * 1.5 + 0.5)
    return _as_bytes(x + layer + np.rot90(layer, k=2))


def frost(pixels, severity, rng):
    # procedural frost texture (plasma filaments with a cold tint) instead of
    # photographed frost assets
    keep, frost_weight = _FROST[severity - 1]
    h, w = pixels.shape[:2]
    t = _plasma_for(w, h, rng, wibbledecay=2.0)
    filaments = np.abs(t - 0.5) * 2.0
    texture = np.clip(0.6 * t + 0.4 * filaments ** 1.5, 0.0, 1.0)
    tint = np.stack([0.90 * texture, 0.96 * texture, texture], axis=-1)
    x = _as_float(pixels)
    return _as_bytes(keep * x + frost_weight * tint)


def fog(pixels, severity, rng):
    weight, decay = _FOG[severity - 1]
    h, w = pixels.shape[:2]
    x = _as_float(pixels)
    max_val = x.max()
    x = x + weight * _plasma_for(w, h, rng, wibbledecay=decay)[:, :, None]
    return _as_bytes(x * max_val / (max_val + weight))


# ---------------------------------------------------------------- photometric

_BRIGHTNESS = (0.1, 0.2, 0.3, 0.4, 0.5)
_CONTRAST = (0.4, 0.3, 0.2, 0.1, 0.05)


def brightness(pixels, severity, rng):
    c = _BRIGHTNESS[severity - 1]
    hsv = cv2.cvtColor(_as_float(pixels).astype(np.float32), cv2.COLOR_RGB2HSV)
    hsv[:, :, 2] = np.clip(hsv[:, :, 2] + c, 0.0, 1.0)
    return _as_bytes(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(np.float64))


def contrast(pixels, severity, rng):
    c = _CONTRAST[severity - 1]
    x = _as_float(pixels)
    means = x.mean(axis=(0, 1), keepdims=True)
    return _as_bytes((x - means) * c + means)


# ---------------------------------------------------------------- digital

# displacement magnitude, field smoothing, affine jitter (pixels at 224 scale)
_ELASTIC = ((244 * 2, 244 * 0.7, 244 * 0.1),
            (244 * 2, 244 * 0.08, 244 * 0.2),
            (244 * 0.05, 244 * 0.01, 244 * 0.02),
            (244 * 0.07, 244 * 0.01, 244 * 0.02),
            (244 * 0.12, 244 * 0.01, 244 * 0.02))
_PIXELATE = (0.6, 0.5, 0.4, 0.3, 0.25)
_JPEG_QUALITY = (25, 18, 15, 10, 7)


def elastic_transform(pixels, severity, rng):
    alpha, field_sigma, affine_jitter = _ELASTIC[severity - 1]
    h, w = pixels.shape[:2]
    s = _spatial_scale(w, h)
    alpha, field_sigma, affine_jitter = alpha * s, field_sigma * s, affine_jitter * s

    x = _as_float(pixels).astype(np.float32)
    center = np.float32((h, w)) // 2
    square = min(h, w) // 3
    pts1 = np.float32([center + square,
                       [center[0] + square, center[1] - square],
                       center - square])
    pts2 = pts1 + rng.uniform(-affine_jitter, affine_jitter,
                              size=pts1.shape).astype(np.float32)
    matrix = cv2.getAffineTransform(pts1, pts2)
    x = cv2.warpAffine(x, matrix, (w, h), borderMode=cv2.BORDER_REFLECT_101)

    dx = gaussian_filter(rng.uniform(-1, 1, size=(h, w)), field_sigma,
                         mode="reflect", truncate=3) * alpha
    dy = gaussian_filter(rng.uniform(-1, 1, size=(h, w)), field_sigma,
                         mode="reflect", truncate=3) * alpha
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([(yy + dy).ravel(), (xx + dx).ravel()])
    out = np.stack([
        map_coordinates(x[:, :, c].astype(np.float64), coords, order=1,
                        mode="reflect").reshape(h, w)
        for c in range(3)
    ], axis=-1)
    return _as_bytes(out)


def pixelate(pixels, severity, rng):
    c = _PIXELATE[severity - 1] / _spatial_scale(pixels.shape[1], pixels.shape[0])
    h, w = pixels.shape[:2]
    dw = max(1, int(w * c))
    dh = max(1, int(h * c))
    im = Image.fromarray(pixels)
    im = im.resize((dw, dh), Image.BOX).resize((w, h), Image.BOX)
    return np.asarray(im, dtype=np.uint8)


def jpeg_compression(pixels, severity, rng):
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, "JPEG", quality=_JPEG_QUALITY[severity - 1])
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


_KIND_FNS = {
    "gaussian_noise": gaussian_noise,
    "shot_noise": shot_noise,
    "impulse_noise": impulse_noise,
    "defocus_blur": defocus_blur,
    "glass_blur": glass_blur,
    "motion_blur": motion_blur,
    "zoom_blur": zoom_blur,
    "snow": snow,
    "frost": frost,
    "fog": fog,
    "brightness": brightness,
    "contrast": contrast,
    "elastic_transform": elastic_transform,
    "pixelate": pixelate,
    "jpeg_compression": jpeg_compression,
}


def corrupt_image(record: ImageRecord, spec: CorruptionSpec,
                  rng: np.random.Generator) -> ImageRecord:
    """Corrupted copy of the record; dimensions and annotations unchanged."""
    out = ImageRecord(id=record.id, width=record.width, height=record.height,
                      file_name=record.file_name)
    out.set_pixels(_KIND_FNS[spec.kind](record.pixels, spec.severity, rng))
    out.annotations = [BBoxAnnotation(a.x, a.y, a.w, a.h, a.category,
                                      a.source_image)
                       for a in record.annotations]
    return out


def _corrupt_task(shared, item):
    dataset, out_dir, seed = shared
    kind_idx, severity, index = item
    kind = CORRUPTION_KINDS[kind_idx]
    rec = dataset.images[index]
    rng = sample_rng(seed, kind_idx, severity, index)
    out = corrupt_image(rec, CorruptionSpec(kind, severity), rng)
    target = Path(out_dir) / kind / str(severity) / "images" / rec.file_name
    Image.fromarray(out.pixels).save(target)
    return str(target)


def corrupt_dataset(dataset: Dataset, kinds, severities,
                    out_dir: Path | str, seed: int = 0,
                    workers: int = 1) -> dict:
    """One complete dataset per (kind, severity) cell under
    ``out_dir/<kind>/<severity>/{images, annotations.json}``.

    Annotation files are byte copies of the clean serialization, so ground
    truth is identical across every cell.
    """
    kinds = list(kinds) if kinds else list(CORRUPTION_KINDS)
    severities = sorted(severities) if severities else list(SEVERITIES)
    for k in kinds:
        if k not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {k!r}; valid kinds: "
                             f"{', '.join(CORRUPTION_KINDS)}")
    for s in severities:
        if s not in SEVERITIES:
            raise ValueError(f"severity must be in {SEVERITIES}, got {s}")

    out_dir = Path(out_dir)
    for rec in dataset.images:
        if rec.file_name is None:
            rec.file_name = f"{rec.id}.png"
    ann_bytes = encode_coco_json(dataset_to_coco(dataset))

    items = []
    for kind in kinds:
        kind_idx = CORRUPTION_KINDS.index(kind)
        for severity in severities:
            cell = out_dir / kind / str(severity)
            (cell / "images").mkdir(parents=True, exist_ok=True)
            (cell / "annotations.json").write_bytes(ann_bytes)
            items.extend((kind_idx, severity, i)
                         for i in range(len(dataset.images)))
    written = deterministic_map(_corrupt_task, items, workers,
                                shared=(dataset, str(out_dir), seed))
    return {"cells": len(kinds) * len(severities),
            "images_per_cell": len(dataset.images),
            "files_written": len(written)}

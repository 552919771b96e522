"""Annotated image dataset model with COCO-style ingestion and emission.

Boxes are integer-pixel, half-open rectangles [x, x+w) x [y, y+h), which keeps
rasterized pasting and pixel counting free of off-by-one ambiguity.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

# Shared by all records; pixel loading is rare and idempotent, so one lock
# (instead of one per record) keeps records picklable for worker processes.
_PIXEL_LOAD_LOCK = threading.Lock()


class DatasetFormatError(ValueError):
    """Annotation file is structurally invalid; message names the offending record."""


@dataclass
class BBoxAnnotation:
    x: int
    y: int
    w: int
    h: int
    category: int
    source_image: int | str

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    @property
    def area(self) -> int:
        return self.w * self.h

    def contains_point(self, px: int, py: int) -> bool:
        return self.x <= px < self.x + self.w and self.y <= py < self.y + self.h

    def clipped(self, width: int, height: int) -> "BBoxAnnotation | None":
        """Clip to image bounds; None if nothing remains."""
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.x + self.w, width)
        y1 = min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BBoxAnnotation(x0, y0, x1 - x0, y1 - y0, self.category, self.source_image)


@dataclass
class ImageRecord:
    id: int | str
    width: int
    height: int
    annotations: list[BBoxAnnotation] = field(default_factory=list)
    file_name: str | None = None
    path: Path | None = None
    _pixels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.id!r}: non-positive dimensions "
                             f"{self.width}x{self.height}")

    @property
    def pixels(self) -> np.ndarray:
        """H x W x 3 uint8 buffer, loaded from ``path`` on first access."""
        if self._pixels is None:
            if self.path is None:
                raise ValueError(f"image {self.id!r} has no pixel buffer and no file path")
            with _PIXEL_LOAD_LOCK:
                if self._pixels is None:
                    with Image.open(self.path) as im:
                        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
                    if arr.shape[:2] != (self.height, self.width):
                        raise ValueError(
                            f"image {self.id!r}: file is {arr.shape[1]}x{arr.shape[0]}, "
                            f"annotations say {self.width}x{self.height}")
                    self._pixels = arr
        return self._pixels

    def set_pixels(self, pixels: np.ndarray) -> None:
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        if pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel buffer shape {pixels.shape} does not match "
                             f"{self.height}x{self.width}x3")
        self._pixels = pixels

    @property
    def pixels_loaded(self) -> bool:
        return self._pixels is not None


@dataclass
class Dataset:
    images: list[ImageRecord]
    categories: dict[int, str]
    root: Path | None = None
    dropped_annotations: int = 0

    def __post_init__(self) -> None:
        seen: set = set()
        for rec in self.images:
            if rec.id in seen:
                raise DatasetFormatError(f"duplicate image id {rec.id!r}")
            seen.add(rec.id)
            for ann in rec.annotations:
                if ann.category not in self.categories:
                    raise DatasetFormatError(
                        f"image {rec.id!r}: annotation references unknown category "
                        f"{ann.category}")
                if ann.source_image != rec.id:
                    raise DatasetFormatError(
                        f"image {rec.id!r}: annotation claims to belong to "
                        f"{ann.source_image!r}")

    def __len__(self) -> int:
        return len(self.images)

    def image_by_id(self, image_id) -> ImageRecord:
        for rec in self.images:
            if rec.id == image_id:
                return rec
        raise KeyError(image_id)

    def annotation_pool(self) -> list[tuple[int, int]]:
        """(image index, annotation index) pairs, one per annotation, in stable order."""
        return [(i, j) for i, rec in enumerate(self.images)
                for j in range(len(rec.annotations))]

    @property
    def total_annotations(self) -> int:
        return sum(len(rec.annotations) for rec in self.images)


def load_dataset(annotation_file: Path | str, image_root: Path | str) -> Dataset:
    """Load a COCO-style annotation file (bbox = [x, y, w, h] pixels).

    Boxes are rounded to integer pixels and clipped to image bounds; boxes with
    no area left are dropped and counted in ``Dataset.dropped_annotations``.
    Missing image files only fail later, at pixel-load time.
    """
    annotation_file = Path(annotation_file)
    image_root = Path(image_root)
    try:
        with open(annotation_file, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{annotation_file}: not valid JSON ({exc})") from exc

    for key in ("images", "annotations", "categories"):
        if key not in raw or not isinstance(raw[key], list):
            raise DatasetFormatError(f"{annotation_file}: missing '{key}' array")

    categories: dict[int, str] = {}
    for cat in raw["categories"]:
        try:
            categories[int(cat["id"])] = str(cat["name"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"category record {cat!r}: {exc}") from exc

    records: dict = {}
    order: list[ImageRecord] = []
    for img in raw["images"]:
        try:
            rec = ImageRecord(
                id=img["id"],
                width=int(img["width"]),
                height=int(img["height"]),
                file_name=img.get("file_name"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"image record {img!r}: {exc}") from exc
        if rec.file_name is not None:
            rec.path = image_root / rec.file_name
        records[rec.id] = rec
        order.append(rec)

    dropped = 0
    for ann in raw["annotations"]:
        try:
            image_id = ann["image_id"]
            category = int(ann["category_id"])
            bx, by, bw, bh = (float(v) for v in ann["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"annotation record {ann!r}: {exc}") from exc
        if image_id not in records:
            raise DatasetFormatError(
                f"annotation {ann.get('id', '?')}: unknown image_id {image_id!r}")
        if category not in categories:
            raise DatasetFormatError(
                f"annotation {ann.get('id', '?')}: unknown category_id {category}")
        rec = records[image_id]
        box = BBoxAnnotation(int(round(bx)), int(round(by)),
                             int(round(bw)), int(round(bh)), category, image_id)
        clipped = box.clipped(rec.width, rec.height) if box.w > 0 and box.h > 0 else None
        if clipped is None:
            dropped += 1
            continue
        rec.annotations.append(clipped)

    if dropped:
        log.warning("%s: dropped %d zero-area or out-of-bounds annotations",
                    annotation_file, dropped)
    return Dataset(images=order, categories=categories, root=image_root,
                   dropped_annotations=dropped)


def dataset_to_coco(dataset: Dataset) -> dict:
    """COCO-style dict for ``dataset`` (categories sorted by id, stable ann ids)."""
    images = []
    annotations = []
    ann_id = 1
    for rec in dataset.images:
        file_name = rec.file_name if rec.file_name is not None else f"{rec.id}.png"
        images.append({"id": rec.id, "file_name": file_name,
                       "width": rec.width, "height": rec.height})
        for ann in rec.annotations:
            annotations.append({
                "id": ann_id,
                "image_id": rec.id,
                "category_id": ann.category,
                "bbox": [ann.x, ann.y, ann.w, ann.h],
                "area": ann.area,
                "iscrowd": 0,
            })
            ann_id += 1
    cats = [{"id": cid, "name": dataset.categories[cid]}
            for cid in sorted(dataset.categories)]
    return {"images": images, "annotations": annotations, "categories": cats}


def encode_coco_json(coco: dict) -> bytes:
    return json.dumps(coco, indent=2, sort_keys=True).encode("utf-8")


def save_dataset(dataset: Dataset, out_dir: Path | str) -> Path:
    """Write ``out_dir/annotations.json`` plus ``out_dir/images/``.

    Records without a file name get ``<id>.png``. Reloading the result gives
    back the exact same annotations.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for rec in dataset.images:
        if rec.file_name is None:
            rec.file_name = f"{rec.id}.png"
        target = img_dir / rec.file_name
        Image.fromarray(rec.pixels).save(target)
    ann_path = out_dir / "annotations.json"
    ann_path.write_bytes(encode_coco_json(dataset_to_coco(dataset)))
    return ann_path


def boxes_mask(width: int, height: int,
               annotations: list[BBoxAnnotation]) -> np.ndarray:
    """Boolean H x W mask of pixels covered by the union of the boxes."""
    mask = np.zeros((height, width), dtype=bool)
    for ann in annotations:
        mask[ann.y:ann.y + ann.h, ann.x:ann.x + ann.w] = True
    return mask


def object_density(record: ImageRecord) -> float:
    """Fraction of pixels covered by the union of the record's boxes.

    Overlapping boxes count once; computed by rasterization, which is exact
    for integer-pixel boxes.
    """
    if not record.annotations:
        return 0.0
    mask = boxes_mask(record.width, record.height, record.annotations)
    return int(mask.sum()) / (record.width * record.height)


@dataclass
class DensityStats:
    densities: list[tuple[int | str, float]]
    hist_counts: list[int]
    hist_edges: list[float]
    mean: float | None
    median: float | None

    @property
    def count(self) -> int:
        return len(self.densities)


def density_stats(dataset: Dataset, bins: int = 20) -> DensityStats:
    """Per-image density histogram plus mean/median, in dataset image order.

    Empty dataset yields an empty histogram with mean/median flagged as None.
    """
    densities = [(rec.id, object_density(rec)) for rec in dataset.images]
    values = np.array([d for _, d in densities], dtype=float)
    edges = np.linspace(0.0, 1.0, bins + 1)
    if values.size == 0:
        return DensityStats(densities, [0] * bins, edges.tolist(), None, None)
    counts, _ = np.histogram(values, bins=edges)
    return DensityStats(densities, counts.tolist(), edges.tolist(),
                        float(values.mean()), float(np.median(values)))

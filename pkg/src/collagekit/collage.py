"""Collage pasting engine plus the mosaic and bare-bbox-paste baselines.

A collage sample is built by repeatedly copying an expanded block around a
randomly chosen source annotation onto a grid corner of the target, until the
union of the target's boxes covers a drawn fraction of its pixels. Expanded
blocks may not overlap existing boxes beyond ``occlusion_tol`` pixels, and
source annotations ride along when at least ``bbox_threshold`` percent of
their area lies inside the copied region.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dataset import BBoxAnnotation, Dataset, ImageRecord, boxes_mask
from .parallel import deterministic_map, sample_rng

BASE_MODES = ("existing-image", "blank-canvas")

# Consecutive paste-less iterations tolerated before a session is declared
# stalled (possible when every remaining corner is too close to the far edges
# for the drawn source boxes); keeps the loop guaranteed to terminate.
STALL_LIMIT = 100


class UnsatisfiableSelectionError(ValueError):
    """No annotation available to select from."""


class Margins(NamedTuple):
    """Block expansion in pixels on each side. Component order is fixed
    (left, top, right, bottom) so seeded runs are reproducible."""
    left: int = 0
    top: int = 0
    right: int = 0
    bottom: int = 0


@dataclass(frozen=True)
class CollageConfig:
    target_density: tuple[float, float] = (0.05, 0.5)
    min_size: int = 25
    max_dilation: int = 512
    max_expansions: int = 100
    min_step: int = 5
    max_step: int = 30
    occlusion_tol: int = 20
    bbox_threshold: float = 50.0
    base_mode: str = "existing-image"
    seed: int = 0
    canvas_fill: int = 128

    def __post_init__(self) -> None:
        lo, hi = self.target_density
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"target_density must satisfy 0 < lo <= hi <= 1, got {lo}, {hi}")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if self.min_step > self.max_step:
            raise ValueError("min_step must not exceed max_step")
        for name in ("max_dilation", "max_expansions", "min_step", "max_step",
                     "occlusion_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0 < self.bbox_threshold <= 100):
            raise ValueError("bbox_threshold must be in (0, 100]")
        if self.base_mode not in BASE_MODES:
            raise ValueError(f"base_mode must be one of {BASE_MODES}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not (0 <= self.canvas_fill <= 255):
            raise ValueError("canvas_fill must be a byte value")


# Hyperparameter profiles for the two aerial corpora this tool was tuned on.
PROFILES: dict[str, CollageConfig] = {
    "rareplanes": CollageConfig(target_density=(0.05, 0.5), min_size=25,
                                max_dilation=512, max_expansions=100,
                                min_step=5, max_step=30, occlusion_tol=20,
                                bbox_threshold=50.0),
    "xview39": CollageConfig(target_density=(0.01, 0.3), min_size=25,
                             max_dilation=1333, max_expansions=100,
                             min_step=5, max_step=30, occlusion_tol=0,
                             bbox_threshold=50.0),
}


@dataclass
class CornerGrid:
    min_size: int
    active: list[tuple[int, int]]

    def shuffle(self, rng: np.random.Generator) -> None:
        perm = rng.permutation(len(self.active))
        self.active = [self.active[i] for i in perm]

    def deactivate_covered(self, mask: np.ndarray) -> None:
        h, w = mask.shape
        self.active = [c for c in self.active
                       if not (c[0] < w and c[1] < h and mask[c[1], c[0]])]


@dataclass
class ImportedBox:
    source_box: tuple[int, int, int, int]   # original box in rotated-source coords
    target_box: tuple[int, int, int, int]   # clipped + translated into the target
    category: int


@dataclass
class PasteEntry:
    source_id: int | str
    quarter_turns: int
    corner: tuple[int, int]
    margins: Margins
    region: tuple[int, int, int, int]       # copied region in rotated-source coords
    attempts: int
    imported: list[ImportedBox]
    fallback: bool

    @property
    def imported_count(self) -> int:
        return len(self.imported)


@dataclass
class PasteLog:
    sample_id: int | str
    base_id: int | str
    target_density: float
    entries: list[PasteEntry] = field(default_factory=list)
    termination: str = "density-reached"
    final_density: float = 0.0

    @property
    def exhausted(self) -> bool:
        return self.termination != "density-reached"


def build_corner_grid(record: ImageRecord, min_size: int) -> CornerGrid:
    """Corner positions at multiples of min_size (both axes inclusive of the
    last multiple within the image), minus corners inside existing boxes."""
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    corners = []
    for i in range(record.width // min_size + 1):
        for j in range(record.height // min_size + 1):
            c = (i * min_size, j * min_size)
            if not any(a.contains_point(*c) for a in record.annotations):
                corners.append(c)
    return CornerGrid(min_size=min_size, active=corners)


def select_source_annotation(dataset: Dataset,
                             rng: np.random.Generator) -> tuple[ImageRecord, BBoxAnnotation]:
    """Uniform over all annotations, so annotation-rich images are chosen
    proportionally more often."""
    pool = dataset.annotation_pool()
    if not pool:
        raise UnsatisfiableSelectionError("dataset has no annotations to select from")
    rec_idx, ann_idx = pool[int(rng.integers(len(pool)))]
    rec = dataset.images[rec_idx]
    return rec, rec.annotations[ann_idx]


def _rotate_box_cw(box: tuple[int, int, int, int], width: int, height: int):
    x, y, w, h = box
    return (height - y - h, x, h, w)


def rotate_source(record: ImageRecord, quarter_turns: int) -> ImageRecord:
    """Record rotated clockwise by 90-degree steps, boxes transformed to the
    exact point-set image of the originals."""
    q = quarter_turns % 4
    if q == 0:
        out = ImageRecord(id=record.id, width=record.width, height=record.height)
        out._pixels = record.pixels
        out.annotations = [BBoxAnnotation(a.x, a.y, a.w, a.h, a.category, record.id)
                           for a in record.annotations]
        return out
    # rot90 view, not a copy: consumers slice out regions, so only the pixels
    # actually pasted get materialized
    pixels = np.rot90(record.pixels, k=-q)
    anns = []
    for a in record.annotations:
        box, bw, bh = a.box, record.width, record.height
        for _ in range(q):
            box = _rotate_box_cw(box, bw, bh)
            bw, bh = bh, bw
        anns.append(BBoxAnnotation(*box, a.category, record.id))
    out = ImageRecord(id=record.id, width=pixels.shape[1], height=pixels.shape[0])
    out._pixels = pixels
    out.annotations = anns
    return out


class _TargetState:
    """Occupancy mask over the target's boxes plus a summed-area table so the
    occlusion count of a candidate block is O(1) per expansion attempt."""

    def __init__(self, record: ImageRecord):
        self.width = record.width
        self.height = record.height
        self.mask = boxes_mask(record.width, record.height, record.annotations)
        self._integral = None

    @property
    def integral(self) -> np.ndarray:
        if self._integral is None:
            import cv2
            self._integral = cv2.integral(self.mask.view(np.uint8))
        return self._integral

    def covered_count(self, x: int, y: int, w: int, h: int) -> int:
        t = self.integral
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])

    def add_box(self, box: tuple[int, int, int, int]) -> None:
        x, y, w, h = box
        self.mask[y:y + h, x:x + w] = True
        self._integral = None

    def union_pixels(self) -> int:
        return int(self.mask.sum())


def _expand_block(state: _TargetState, box_w: int, box_h: int,
                  corner: tuple[int, int], config: CollageConfig,
                  rng: np.random.Generator) -> tuple[Margins | None, int]:
    """Run the expansion attempts for one corner.

    Each attempt grows one random side by a random step (capped at
    max_dilation) and commits only if the candidate block stays in bounds and
    overlaps existing boxes by at most occlusion_tol pixels. Returns the last
    committed margins (None if nothing committed) and the attempt count.
    """
    n = config.max_expansions
    if n <= 0:
        return None, 0
    steps = rng.integers(config.min_step, config.max_step + 1, size=n)
    sides = rng.integers(0, 4, size=n)
    cx, cy = corner
    margins = [0, 0, 0, 0]
    committed: Margins | None = None
    for a, side in zip(steps, sides):
        cand = margins.copy()
        cand[side] = min(cand[side] + int(a), config.max_dilation)
        bw = box_w + cand[0] + cand[2]
        bh = box_h + cand[1] + cand[3]
        if cx + bw <= state.width and cy + bh <= state.height:
            if state.covered_count(cx, cy, bw, bh) <= config.occlusion_tol:
                margins = cand
                committed = Margins(*margins)
    return committed, n


def try_expand_block(target: ImageRecord, bbox: BBoxAnnotation,
                     corner: tuple[int, int], config: CollageConfig,
                     rng: np.random.Generator) -> Margins | None:
    """Public wrapper over the expansion loop, building occupancy state from
    the record's current annotations. Returns None when no attempt commits."""
    state = _TargetState(target)
    margins, _ = _expand_block(state, bbox.w, bbox.h, corner, config, rng)
    return margins


def _clip_margins_to_source(source: ImageRecord, bbox: BBoxAnnotation,
                            margins: Margins) -> Margins:
    # The paste region may not reach past the source image; the pasted block
    # shrinks correspondingly.
    return Margins(
        left=min(margins.left, bbox.x),
        top=min(margins.top, bbox.y),
        right=min(margins.right, source.width - (bbox.x + bbox.w)),
        bottom=min(margins.bottom, source.height - (bbox.y + bbox.h)),
    )


def paste_block(target: ImageRecord, source: ImageRecord, bbox: BBoxAnnotation,
                corner: tuple[int, int], margins: Margins,
                bbox_threshold: float) -> tuple[list[ImportedBox],
                                                tuple[int, int, int, int]]:
    """Copy the margin-expanded region around ``bbox`` into the target with
    its top-left at ``corner``; import every source annotation at least
    bbox_threshold percent contained in the region.

    Mutates the target's pixels and annotations; returns the imports and the
    copied region (rotated-source coordinates).
    """
    eff = _clip_margins_to_source(source, bbox, margins)
    rx = bbox.x - eff.left
    ry = bbox.y - eff.top
    rw = bbox.w + eff.left + eff.right
    rh = bbox.h + eff.top + eff.bottom
    cx, cy = corner
    if cx < 0 or cy < 0 or cx + rw > target.width or cy + rh > target.height:
        raise ValueError(
            f"pasted block ({cx},{cy},{rw},{rh}) leaves target bounds "
            f"{target.width}x{target.height}")

    target.pixels[cy:cy + rh, cx:cx + rw] = source.pixels[ry:ry + rh, rx:rx + rw]

    imported: list[ImportedBox] = []
    for ann in source.annotations:
        ix0 = max(ann.x, rx)
        iy0 = max(ann.y, ry)
        ix1 = min(ann.x + ann.w, rx + rw)
        iy1 = min(ann.y + ann.h, ry + rh)
        if ix1 <= ix0 or iy1 <= iy0:
            continue
        inter = (ix1 - ix0) * (iy1 - iy0)
        if 100.0 * inter < bbox_threshold * ann.area:
            continue
        tbox = (ix0 - rx + cx, iy0 - ry + cy, ix1 - ix0, iy1 - iy0)
        imported.append(ImportedBox(source_box=ann.box, target_box=tbox,
                                    category=ann.category))
        target.annotations.append(
            BBoxAnnotation(*tbox, ann.category, target.id))
    return imported, (rx, ry, rw, rh)


def _prepare_target(base: ImageRecord, config: CollageConfig,
                    out_id) -> ImageRecord:
    rec = ImageRecord(id=out_id if out_id is not None else base.id,
                      width=base.width, height=base.height)
    if config.base_mode == "blank-canvas":
        rec.set_pixels(np.full((base.height, base.width, 3),
                               config.canvas_fill, dtype=np.uint8))
    else:
        rec.set_pixels(base.pixels.copy())
        rec.annotations = [BBoxAnnotation(a.x, a.y, a.w, a.h, a.category, rec.id)
                           for a in base.annotations]
    return rec


def collage_augment(base: ImageRecord, dataset: Dataset, config: CollageConfig,
                    rng: np.random.Generator,
                    out_id=None) -> tuple[ImageRecord, PasteLog]:
    """Produce one collage sample on top of ``base`` (or a blank canvas of its
    size, per config.base_mode)."""
    pool = dataset.annotation_pool()
    if not pool:
        raise UnsatisfiableSelectionError("dataset has no annotations to select from")

    target = _prepare_target(base, config, out_id)
    area = target.width * target.height
    lo, hi = config.target_density
    drawn = float(rng.uniform(lo, hi))
    log = PasteLog(sample_id=target.id, base_id=base.id, target_density=drawn)

    grid = build_corner_grid(target, config.min_size)
    state = _TargetState(target)
    stall = 0

    while state.union_pixels() / area < drawn:
        if not grid.active:
            log.termination = "corners-exhausted"
            break
        rec_idx, ann_idx = pool[int(rng.integers(len(pool)))]
        quarter_turns = int(rng.integers(0, 4))
        src = rotate_source(dataset.images[rec_idx], quarter_turns)
        seed_ann = src.annotations[ann_idx]
        grid.shuffle(rng)

        entry: PasteEntry | None = None
        for corner in grid.active:
            # A corner where even the bare box would leave bounds can never
            # host a successful attempt; skip it outright.
            if corner[0] + seed_ann.w > target.width or \
               corner[1] + seed_ann.h > target.height:
                continue
            margins, attempts = _expand_block(state, seed_ann.w, seed_ann.h,
                                              corner, config, rng)
            if margins is None:
                continue
            imported, region = paste_block(target, src, seed_ann, corner,
                                           margins, config.bbox_threshold)
            entry = PasteEntry(source_id=dataset.images[rec_idx].id,
                               quarter_turns=quarter_turns, corner=corner,
                               margins=margins, region=region,
                               attempts=attempts, imported=imported,
                               fallback=False)
            break

        if entry is None:
            # Fallback: the bare box at a random corner, exempt from the
            # occlusion check, restricted to corners where it fits at all.
            feasible = [c for c in grid.active
                        if c[0] + seed_ann.w <= target.width
                        and c[1] + seed_ann.h <= target.height]
            if feasible:
                corner = feasible[int(rng.integers(len(feasible)))]
                imported, region = paste_block(target, src, seed_ann, corner,
                                               Margins(), config.bbox_threshold)
                entry = PasteEntry(source_id=dataset.images[rec_idx].id,
                                   quarter_turns=quarter_turns, corner=corner,
                                   margins=Margins(), region=region,
                                   attempts=0, imported=imported,
                                   fallback=True)

        if entry is not None:
            log.entries.append(entry)
            for imp in entry.imported:
                state.add_box(imp.target_box)
            stall = 0
        else:
            stall += 1
            if stall >= STALL_LIMIT:
                log.termination = "stalled"
                break
        grid.deactivate_covered(state.mask)

    log.final_density = state.union_pixels() / area
    return target, log


def _collage_task(shared, item):
    dataset, config, n = shared
    epoch, index = item
    rng = sample_rng(config.seed, epoch, index)
    out_id = epoch * n + index + 1
    try:
        rec, log = collage_augment(dataset.images[index], dataset, config, rng,
                                   out_id=out_id)
    except OSError as exc:
        raise RuntimeError(
            f"sample (epoch {epoch}, index {index}) failed: {exc}") from exc
    rec.file_name = f"collage_e{epoch:03d}_i{index:05d}.png"
    return rec, log


def generate_collage_dataset(dataset: Dataset, config: CollageConfig,
                             epochs: int, workers: int = 1,
                             logs: list[PasteLog] | None = None) -> Dataset:
    """epochs x len(dataset) collage samples; sample (epoch, index) draws its
    randomness from a stream derived from (config.seed, epoch, index), so the
    output does not depend on the worker count."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    n = len(dataset.images)
    items = [(e, i) for e in range(epochs) for i in range(n)]
    results = deterministic_map(_collage_task, items, workers,
                                shared=(dataset, config, n))
    records = [rec for rec, _ in results]
    if logs is not None:
        logs.extend(log for _, log in results)
    return Dataset(images=records, categories=dict(dataset.categories))


def tile_edges(total: int, parts: int) -> list[int]:
    return [(k * total) // parts for k in range(parts + 1)]


def mosaic_augment(dataset: Dataset, grid: tuple[int, int],
                   rng: np.random.Generator, bbox_threshold: float = 50.0,
                   out_id=None) -> ImageRecord:
    """Stitch an i x j tile grid, every tile taken from the matching tile of a
    randomly drawn source image (sources resized to the output dims first)."""
    gi, gj = grid
    if gi not in (1, 2, 3, 4) or gj not in (1, 2, 3, 4):
        raise ValueError("grid factors must be in {1, 2, 3, 4}")
    if not dataset.images:
        raise ValueError("mosaic needs a non-empty dataset")

    picks = [int(rng.integers(len(dataset.images))) for _ in range(gi * gj)]
    base = dataset.images[picks[0]]
    width, height = base.width, base.height
    out = ImageRecord(id=out_id if out_id is not None else base.id,
                      width=width, height=height)
    out.set_pixels(np.zeros((height, width, 3), dtype=np.uint8))

    xs = tile_edges(width, gi)
    ys = tile_edges(height, gj)
    resized_cache: dict[int, tuple[np.ndarray, list[BBoxAnnotation]]] = {}

    def resized(idx: int):
        if idx not in resized_cache:
            src = dataset.images[idx]
            if (src.width, src.height) == (width, height):
                resized_cache[idx] = (src.pixels, list(src.annotations))
            else:
                import cv2
                pix = cv2.resize(src.pixels, (width, height),
                                 interpolation=cv2.INTER_LINEAR)
                sx = width / src.width
                sy = height / src.height
                anns = []
                for a in src.annotations:
                    x0 = int(round(a.x * sx))
                    y0 = int(round(a.y * sy))
                    x1 = min(int(round((a.x + a.w) * sx)), width)
                    y1 = min(int(round((a.y + a.h) * sy)), height)
                    if x1 > x0 and y1 > y0:
                        anns.append(BBoxAnnotation(x0, y0, x1 - x0, y1 - y0,
                                                   a.category, src.id))
                resized_cache[idx] = (pix, anns)
        return resized_cache[idx]

    k = 0
    for tj in range(gj):
        for ti in range(gi):
            pix, anns = resized(picks[k])
            k += 1
            x0, x1 = xs[ti], xs[ti + 1]
            y0, y1 = ys[tj], ys[tj + 1]
            out.pixels[y0:y1, x0:x1] = pix[y0:y1, x0:x1]
            for a in anns:
                ix0, iy0 = max(a.x, x0), max(a.y, y0)
                ix1 = min(a.x + a.w, x1)
                iy1 = min(a.y + a.h, y1)
                if ix1 <= ix0 or iy1 <= iy0:
                    continue
                inter = (ix1 - ix0) * (iy1 - iy0)
                if 100.0 * inter < bbox_threshold * a.area:
                    continue
                out.annotations.append(BBoxAnnotation(
                    ix0, iy0, ix1 - ix0, iy1 - iy0, a.category, out.id))
    return out


def bbox_paste_augment(target: ImageRecord, dataset: Dataset, count: int,
                       rng: np.random.Generator, max_retries: int = 100,
                       out_id=None) -> tuple[ImageRecord, int]:
    """Paste ``count`` bare bounding-box chips at random positions that do not
    overlap any current box. Returns the new record and how many pastes had to
    be skipped after exhausting retries."""
    pool = dataset.annotation_pool()
    if not pool:
        raise UnsatisfiableSelectionError("dataset has no annotations to select from")
    out = ImageRecord(id=out_id if out_id is not None else target.id,
                      width=target.width, height=target.height)
    out.set_pixels(target.pixels.copy())
    out.annotations = [BBoxAnnotation(a.x, a.y, a.w, a.h, a.category, out.id)
                       for a in target.annotations]
    skipped = 0
    for _ in range(count):
        rec_idx, ann_idx = pool[int(rng.integers(len(pool)))]
        src = dataset.images[rec_idx]
        ann = src.annotations[ann_idx]
        if ann.w > out.width or ann.h > out.height:
            skipped += 1
            continue
        placed = False
        for _ in range(max_retries):
            x = int(rng.integers(0, out.width - ann.w + 1))
            y = int(rng.integers(0, out.height - ann.h + 1))
            clash = any(x < b.x + b.w and b.x < x + ann.w and
                        y < b.y + b.h and b.y < y + ann.h
                        for b in out.annotations)
            if not clash:
                out.pixels[y:y + ann.h, x:x + ann.w] = \
                    src.pixels[ann.y:ann.y + ann.h, ann.x:ann.x + ann.w]
                out.annotations.append(
                    BBoxAnnotation(x, y, ann.w, ann.h, ann.category, out.id))
                placed = True
                break
        if not placed:
            skipped += 1
    return out, skipped


def write_paste_logs(logs: list[PasteLog], path: Path | str) -> None:
    """One JSON record per line: a sample header followed by its pastes."""
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(json.dumps({
                "type": "sample", "sample_id": log.sample_id,
                "base_id": log.base_id, "target_density": log.target_density,
                "termination": log.termination, "exhausted": log.exhausted,
                "final_density": log.final_density, "pastes": len(log.entries),
            }, sort_keys=True) + "\n")
            for seq, e in enumerate(log.entries):
                fh.write(json.dumps({
                    "type": "paste", "sample_id": log.sample_id, "seq": seq,
                    "source_id": e.source_id, "quarter_turns": e.quarter_turns,
                    "corner": list(e.corner), "margins": list(e.margins),
                    "region": list(e.region), "attempts": e.attempts,
                    "fallback": e.fallback,
                    "imported": [{"source_box": list(i.source_box),
                                  "target_box": list(i.target_box),
                                  "category": i.category} for i in e.imported],
                }, sort_keys=True) + "\n")


def read_paste_logs(path: Path | str) -> list[PasteLog]:
    logs: list[PasteLog] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "sample":
                logs.append(PasteLog(sample_id=rec["sample_id"],
                                     base_id=rec["base_id"],
                                     target_density=rec["target_density"],
                                     termination=rec["termination"],
                                     final_density=rec["final_density"]))
            else:
                logs[-1].entries.append(PasteEntry(
                    source_id=rec["source_id"],
                    quarter_turns=rec["quarter_turns"],
                    corner=tuple(rec["corner"]),
                    margins=Margins(*rec["margins"]),
                    region=tuple(rec["region"]),
                    attempts=rec["attempts"],
                    fallback=rec["fallback"],
                    imported=[ImportedBox(source_box=tuple(i["source_box"]),
                                          target_box=tuple(i["target_box"]),
                                          category=i["category"])
                              for i in rec["imported"]],
                ))
    return logs

"""Figure rendering for the report paths (density stats, corruption grid,
annotated previews)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .corruption import CORRUPTION_KINDS, SEVERITIES
from .dataset import Dataset, DensityStats

_BOX_COLORS = ("#00d26a", "#ffb02e", "#00a6ed", "#f8312f", "#b620e0")


def save_density_histogram(stats: DensityStats, path: Path | str,
                           title: str = "object density per image") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    centers = [(a + b) / 2 for a, b in zip(stats.hist_edges, stats.hist_edges[1:])]
    width = stats.hist_edges[1] - stats.hist_edges[0]
    ax.bar(centers, stats.hist_counts, width=width * 0.95, color="#4878d0")
    if stats.mean is not None:
        ax.axvline(stats.mean, color="#d65f5f", linestyle="--",
                   label=f"mean {stats.mean:.4f}")
        ax.axvline(stats.median, color="#6acc64", linestyle=":",
                   label=f"median {stats.median:.4f}")
        ax.legend()
    ax.set_xlabel("density (union of boxes / image pixels)")
    ax.set_ylabel("images")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_corruption_map_plot(grid: dict, clean_map: float | None,
                             path: Path | str) -> None:
    """Per-kind mean mAP across severities, one point per corruption kind."""
    kinds = [k for k in CORRUPTION_KINDS
             if all((k, s) in grid for s in SEVERITIES)]
    means = [sum(grid[(k, s)] for s in SEVERITIES) / len(SEVERITIES)
             for k in kinds]
    fig, ax = plt.subplots(figsize=(10, 4.5))
    ax.plot(range(len(kinds)), means, "o-", color="#4878d0", label="corrupted")
    if clean_map is not None:
        ax.axhline(clean_map, color="#d65f5f", linestyle="--",
                   label=f"clean mAP {clean_map:.3f}")
    ax.set_xticks(range(len(kinds)))
    ax.set_xticklabels(kinds, rotation=45, ha="right")
    ax.set_ylabel("mAP (mean over severities)")
    ax.set_ylim(bottom=0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_preview_images(dataset: Dataset, out_dir: Path | str,
                        count: int) -> list[Path]:
    """Render the first ``count`` samples with their boxes drawn on top."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in dataset.images[:count]:
        fig, ax = plt.subplots(figsize=(6, 6 * rec.height / max(rec.width, 1)))
        ax.imshow(rec.pixels)
        for ann in rec.annotations:
            color = _BOX_COLORS[ann.category % len(_BOX_COLORS)]
            ax.add_patch(Rectangle((ann.x, ann.y), ann.w, ann.h,
                                   fill=False, edgecolor=color, linewidth=1.5))
        ax.set_title(f"{rec.id}  ({len(rec.annotations)} boxes)")
        ax.set_axis_off()
        fig.tight_layout()
        target = out_dir / f"preview_{rec.id}.png"
        fig.savefig(target, dpi=110)
        plt.close(fig)
        written.append(target)
    return written

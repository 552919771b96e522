"""collagekit: offline dataset augmentation for aerial object detection."""

__version__ = "0.1.0"

from .collage import (                                            # noqa: F401
    PROFILES,
    CollageConfig,
    CornerGrid,
    Margins,
    PasteEntry,
    PasteLog,
    bbox_paste_augment,
    build_corner_grid,
    collage_augment,
    generate_collage_dataset,
    mosaic_augment,
    paste_block,
    read_paste_logs,
    rotate_source,
    select_source_annotation,
    try_expand_block,
    write_paste_logs,
)
from .corruption import (                                         # noqa: F401
    CORRUPTION_KINDS,
    SEVERITIES,
    CorruptionSpec,
    corrupt_dataset,
    corrupt_image,
)
from .dataset import (                                            # noqa: F401
    BBoxAnnotation,
    Dataset,
    DatasetFormatError,
    DensityStats,
    ImageRecord,
    density_stats,
    load_dataset,
    object_density,
    save_dataset,
)
from .metrics import (                                            # noqa: F401
    DetectionResult,
    EvalReport,
    IncompleteGridError,
    average_precision,
    iou,
    load_detections,
    map_coco,
    mapc,
    match_detections,
)
from .mix import (                                                # noqa: F401
    MixerSet,
    PixMixConfig,
    colmix_a_pipeline,
    colmix_b_stage,
    generate_pixmix_dataset,
    load_mixers,
    pixmix_augment,
)
from .parallel import sample_rng                                  # noqa: F401

"""orchardtk: tiled fruit detection over multi-megapixel orchard imagery.

Plan overlapping windows over large images, run a pluggable detector per
tile, fuse detections with thresholding plus NMS, and evaluate with
one-to-one IoU matching, PR curves, AP and F1. Also ships the dataset
plumbing (manifests, patch sampling, splits) and the label-preserving
augmentations used at training time.
"""

from .augment import (
    AppliedAugmentation,
    AugmentationSpec,
    ColorStats,
    apply_flip,
    apply_pca_jitter,
    compute_color_stats,
    rescale_shorter_side,
    sample_augmentation,
)
from .dataset import (
    Annotation,
    ImageRecord,
    Manifest,
    ManifestError,
    ManifestParseError,
    ManifestValidationError,
    PatchSpec,
    discard_empty,
    draw_training_subset,
    load_manifest,
    sample_subimages,
    save_manifest,
)
from .detector import (
    DetectionsNotFoundError,
    DetectorError,
    DetectorSpec,
    DetectRequest,
    ExternalConfig,
    ExternalDetector,
    FileDetector,
    OracleDetector,
    OracleNoise,
    ProtocolError,
    detect,
    gt_boxes_by_image,
    load_detections,
    make_detector,
    oracle_detect,
    save_detections,
)
from .evaluation import (
    AblationReport,
    AblationRow,
    MatchConfig,
    MatchResult,
    Metrics,
    PRCurve,
    PRPoint,
    ablate,
    average_precision,
    f1_score,
    match_detections,
    pr_curve,
    relax_clusters,
    select_operating_threshold,
)
from .geometry import (
    Box,
    Circle,
    Size,
    circle_to_box,
    clip_box,
    intersect_box,
    iou,
    scale_box,
    translate_box,
)
from .proposals import (
    AnchorConfig,
    BoxDelta,
    Detection,
    ProposalConfig,
    decode_box,
    detection_sort_key,
    encode_box,
    feature_map_size,
    generate_anchors,
    nms,
    select_top,
    sort_detections,
)
from .seeding import DEFAULT_SEED, derive_seed
from .tiling import TilePlan, TilingConfig, fuse, plan_tiles, run_tiled

__version__ = "0.1.0"

"""Deterministic detector box machinery.

Anchor grids, the (tx, ty, tw, th) box-regression codec, greedy NMS and
top-N selection. No network code lives here; these are the geometric
pieces any region-proposal detector plugs into, kept exact and ordered so
every downstream result is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Box, Size

#: Feature-map subsampling factor of the backbone; objects smaller than
#: one stride cannot be localized, so 16 px is the minimum object size.
DEFAULT_STRIDE = 16

#: PASCAL-VOC style anchor side lengths, in pixels.
DEFAULT_SCALES = (128.0, 256.0, 512.0)

#: Anchor side lengths matched to orchard fruit (roughly 26-37 px wide).
FRUIT_SCALES = (32.0, 64.0, 128.0)

DEFAULT_RATIOS = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor grid parameters: stride plus per-cell scales and ratios."""

    stride: int = DEFAULT_STRIDE
    scales: tuple[float, ...] = DEFAULT_SCALES
    ratios: tuple[float, ...] = DEFAULT_RATIOS

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be non-empty and positive")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be non-empty and positive")

    @classmethod
    def fruit_preset(cls) -> "AnchorConfig":
        """Anchor sizes shrunk to fruit scale instead of the VOC defaults."""
        return cls(scales=FRUIT_SCALES)


@dataclass(frozen=True)
class BoxDelta:
    """Box regression parameterization relative to an anchor.

    tx, ty are center offsets normalized by anchor width/height; tw, th
    are log ratios of width/height.
    """

    tx: float
    ty: float
    tw: float
    th: float

    def __post_init__(self) -> None:
        for name in ("tx", "ty", "tw", "th"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"delta component {name} must be finite")


@dataclass(frozen=True)
class Detection:
    """A scored, labelled box."""

    box: Box
    score: float
    label: str = "fruit"

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class ProposalConfig:
    """Test-time proposal handling: top-N cut, NMS overlap, score cut."""

    top_n: int = 300
    nms_iou: float = 0.3
    score_threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must lie in [0, 1], got {self.nms_iou}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(
                f"score_threshold must lie in [0, 1], got {self.score_threshold}"
            )


def feature_map_size(image: Size, stride: int = DEFAULT_STRIDE) -> tuple[int, int]:
    """Feature-map (width, height) for an image at the given stride."""
    return image.width // stride, image.height // stride


def generate_anchors(feat_width: int, feat_height: int, cfg: AnchorConfig) -> list[Box]:
    """Enumerate the anchor grid for a feature map.

    The anchor for grid cell (i, j) is centered at ((i + 0.5) * stride,
    (j + 0.5) * stride); for scale s and ratio r (height/width) its width
    is s / sqrt(r) and height s * sqrt(r). Ordering is row-major over
    cells, then scales, then ratios. Anchors are not clipped to any image.
    """
    if feat_width < 1 or feat_height < 1:
        raise ValueError("feature map dimensions must be >= 1")
    scales = np.asarray(cfg.scales, dtype=np.float64)
    ratios = np.asarray(cfg.ratios, dtype=np.float64)
    half_w = (scales[:, None] / np.sqrt(ratios)[None, :]) / 2.0  # (S, R)
    half_h = (scales[:, None] * np.sqrt(ratios)[None, :]) / 2.0

    cx = (np.arange(feat_width, dtype=np.float64) + 0.5) * cfg.stride
    cy = (np.arange(feat_height, dtype=np.float64) + 0.5) * cfg.stride

    # Shape (H, W, S, R, 4); C-order reshape yields cells row-major,
    # then scales, then ratios.
    coords = np.empty((feat_height, feat_width, len(scales), len(ratios), 4))
    coords[..., 0] = cx[None, :, None, None] - half_w[None, None, :, :]
    coords[..., 1] = cy[:, None, None, None] - half_h[None, None, :, :]
    coords[..., 2] = cx[None, :, None, None] + half_w[None, None, :, :]
    coords[..., 3] = cy[:, None, None, None] + half_h[None, None, :, :]
    flat = coords.reshape(-1, 4)
    return [Box(float(a), float(b), float(c), float(d)) for a, b, c, d in flat]


def encode_box(gt: Box, anchor: Box) -> BoxDelta:
    """Encode a target box as a delta against an anchor."""
    wa, ha = anchor.width, anchor.height
    wg, hg = gt.width, gt.height
    if wa <= 0 or ha <= 0:
        raise ValueError("anchor must have positive width and height")
    if wg <= 0 or hg <= 0:
        raise ValueError("target box must have positive width and height")
    xa, ya = anchor.center
    xg, yg = gt.center
    return BoxDelta(
        tx=(xg - xa) / wa,
        ty=(yg - ya) / ha,
        tw=math.log(wg / wa),
        th=math.log(hg / ha),
    )


def decode_box(delta: BoxDelta, anchor: Box) -> Box:
    """Apply a delta to an anchor; inverse of :func:`encode_box`."""
    wa, ha = anchor.width, anchor.height
    if wa <= 0 or ha <= 0:
        raise ValueError("anchor must have positive width and height")
    xa, ya = anchor.center
    xc = delta.tx * wa + xa
    yc = delta.ty * ha + ya
    w = wa * math.exp(delta.tw)
    h = ha * math.exp(delta.th)
    return Box(xc - w / 2.0, yc - h / 2.0, xc + w / 2.0, yc + h / 2.0)


def detection_sort_key(det: Detection) -> tuple:
    """Canonical ordering: score descending, then box coordinates, then label.

    Every list of detections this package emits is sorted with this key,
    which is what makes NMS, top-N and parallel tile runs deterministic.
    """
    b = det.box
    return (-det.score, b.x_min, b.y_min, b.x_max, b.y_max, det.label)


def sort_detections(dets: Iterable[Detection]) -> list[Detection]:
    """Sort detections into canonical order."""
    return sorted(dets, key=detection_sort_key)


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression over a single-class detection list.

    Repeatedly keeps the best remaining detection (canonical order) and
    suppresses every detection whose IoU with it is strictly greater than
    ``iou_threshold``. Output keeps canonical order; boundary-equal
    overlaps survive.
    """
    if not dets:
        return []
    order = sort_detections(dets)
    coords = np.array([d.box.as_tuple() for d in order], dtype=np.float64)
    x0, y0, x1, y1 = coords[:, 0], coords[:, 1], coords[:, 2], coords[:, 3]
    areas = (x1 - x0) * (y1 - y0)
    n = len(order)
    alive = np.ones(n, dtype=bool)
    kept: list[Detection] = []
    for i in range(n):
        if not alive[i]:
            continue
        kept.append(order[i])
        if i + 1 == n:
            break
        iw = np.minimum(x1[i], x1[i + 1 :]) - np.maximum(x0[i], x0[i + 1 :])
        ih = np.minimum(y1[i], y1[i + 1 :]) - np.maximum(y0[i], y0[i + 1 :])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        union = areas[i] + areas[i + 1 :] - inter
        ious = np.zeros_like(inter)
        np.divide(inter, union, out=ious, where=union > 0)
        alive[i + 1 :] &= ~(ious > iou_threshold)
    return kept


def select_top(dets: Sequence[Detection], top_n: int) -> list[Detection]:
    """The ``top_n`` best detections in canonical order (all, if fewer)."""
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    return sort_detections(dets)[:top_n]

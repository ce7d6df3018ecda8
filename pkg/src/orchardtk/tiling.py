"""Tiled detection over large images.

Multi-megapixel orchard frames do not fit a detector's input budget, so
they are covered with overlapping fixed-size windows. As long as the
overlap is at least the largest fruit, every fruit appears whole in some
window; per-tile detections are lifted back into raw-image coordinates,
pooled, then fused with score thresholding plus NMS.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .dataset import ImageRecord
from .detector import DetectorError, DetectRequest
from .geometry import Box, Size, translate_box
from .proposals import Detection, ProposalConfig, nms, sort_detections


@dataclass(frozen=True)
class TilingConfig:
    """Window size, overlap, and the fusion thresholds."""

    tile_size: Size = Size(500, 500)
    overlap: int = 50
    proposal: ProposalConfig = ProposalConfig()

    def __post_init__(self) -> None:
        if self.overlap < 0:
            raise ValueError(f"overlap must be non-negative, got {self.overlap}")
        if self.overlap >= min(self.tile_size.width, self.tile_size.height):
            raise ValueError(
                f"overlap {self.overlap} must be smaller than the tile "
                f"{self.tile_size.width}x{self.tile_size.height}"
            )


@dataclass(frozen=True)
class TilePlan:
    """The overlapping windows covering one image, in row-major order."""

    image_size: Size
    tiles: tuple[Box, ...]

    def to_json_obj(self) -> dict:
        return {
            "image_size": [self.image_size.width, self.image_size.height],
            "tiles": [list(t.as_tuple()) for t in self.tiles],
        }


def _axis_origins(image_extent: int, tile_extent: int, overlap: int) -> list[int]:
    """Tile origins along one axis: stride tile-overlap, final tile flush."""
    if image_extent <= tile_extent:
        return [0]
    stride = tile_extent - overlap
    origins: list[int] = []
    position = 0
    while True:
        if position + tile_extent >= image_extent:
            origins.append(image_extent - tile_extent)
            return origins
        origins.append(position)
        position += stride


def plan_tiles(image: Size, cfg: TilingConfig) -> TilePlan:
    """Cover an image with overlapping windows.

    Origins advance by (tile - overlap); when the last stride position
    would overrun, the final tile is clamped flush with the image edge
    (giving it a larger overlap) rather than padding past the border. An
    image smaller than the tile along an axis gets a single window
    spanning that axis.
    """
    tw, th = cfg.tile_size.width, cfg.tile_size.height
    xs = _axis_origins(image.width, tw, cfg.overlap)
    ys = _axis_origins(image.height, th, cfg.overlap)
    tiles = [
        Box(
            float(x),
            float(y),
            float(min(x + tw, image.width)),
            float(min(y + th, image.height)),
        )
        for y in ys
        for x in xs
    ]
    return TilePlan(image_size=image, tiles=tuple(tiles))


def run_tiled(
    record: ImageRecord | str,
    plan: TilePlan,
    detector,
    *,
    parallelism: int = 1,
) -> list[Detection]:
    """Run a detector over every tile and pool raw-image detections.

    No thresholding or NMS happens here; the pooled list is canonically
    sorted so the result is independent of tile execution order. Detector
    failures are re-raised annotated with the failing tile rect.
    """
    image_id = record.id if isinstance(record, ImageRecord) else record
    if isinstance(record, ImageRecord) and record.size != plan.image_size:
        raise ValueError(
            f"plan was made for {plan.image_size}, image {image_id!r} "
            f"is {record.size}"
        )

    def detect_tile(tile: Box) -> list[Detection]:
        try:
            local = detector.detect(DetectRequest(image_id=image_id, rect=tile))
        except Exception as exc:
            raise DetectorError(
                f"detection failed on tile ({tile.x_min:g}, {tile.y_min:g}, "
                f"{tile.x_max:g}, {tile.y_max:g}) of image {image_id!r}: {exc}"
            ) from exc
        return [
            Detection(
                box=translate_box(d.box, tile.x_min, tile.y_min),
                score=d.score,
                label=d.label,
            )
            for d in local
        ]

    pooled: list[Detection] = []
    if parallelism <= 1:
        for tile in plan.tiles:
            pooled.extend(detect_tile(tile))
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for dets in pool.map(detect_tile, plan.tiles):
                pooled.extend(dets)
    return sort_detections(pooled)


def fuse(pooled: Sequence[Detection], cfg: TilingConfig) -> list[Detection]:
    """Score-threshold then NMS the pooled detections of one image."""
    threshold = cfg.proposal.score_threshold
    kept = [d for d in pooled if d.score >= threshold]
    return nms(kept, cfg.proposal.nms_iou)

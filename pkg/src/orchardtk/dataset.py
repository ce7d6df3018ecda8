"""Ground-truth corpus handling.

Manifest I/O with a canonical byte form, sub-image patch sampling from raw
farm images, empty-image filtering and reproducible training-subset draws.

A manifest is UTF-8 JSON:

    { "version": 1, "fruit": "<name>",
      "images": [ { "id": "...", "path": "...", "width": W, "height": H,
                    "split": "train|val|test",
                    "annotations": [ {"label": "...", "shape": "box",
                                      "box": [x0, y0, x1, y1]}
                                   | {"label": "...", "shape": "circle",
                                      "circle": [cx, cy, r]} ],
                    "source": {"id": "...", "offset": [x, y]}  # optional
                  } ],
      "metadata": { ... } }

Numbers carry at most four fractional digits; saving the same corpus twice
produces identical bytes. The optional "source" block records patch
provenance (raw image id plus the patch origin in raw coordinates).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import canonical
from .geometry import Box, Circle, Size, circle_to_box, clip_box, translate_box
from .seeding import derive_seed

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")

_TOP_KEYS = {"version", "fruit", "images", "metadata"}
_IMAGE_KEYS = {"id", "path", "width", "height", "split", "annotations", "source"}
_SOURCE_KEYS = {"id", "offset"}
_ANN_KEYS = {"label", "shape", "box", "circle"}


class ManifestError(ValueError):
    """Base class for manifest load/save failures."""


class ManifestParseError(ManifestError):
    """The document is not well-formed JSON."""


class ManifestValidationError(ManifestError):
    """The document parsed but violates the schema or an invariant."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        summary = "; ".join(self.problems)
        super().__init__(f"{len(self.problems)} validation problem(s): {summary}")


@dataclass(frozen=True)
class Annotation:
    """One labelled fruit. Circles keep their source circle alongside the
    converted box; the box always equals the circle's bounding square."""

    label: str
    shape: str  # "box" | "circle"
    box: Box
    circle: Circle | None = None
    source_ref: str | None = None  # in-memory provenance, not serialized

    @classmethod
    def from_box(cls, label: str, box: Box) -> "Annotation":
        return cls(label=label, shape="box", box=box)

    @classmethod
    def from_circle(cls, label: str, circle: Circle) -> "Annotation":
        return cls(label=label, shape="circle", box=circle_to_box(circle), circle=circle)


@dataclass(frozen=True)
class ImageRecord:
    """One raster with its annotations and split assignment."""

    id: str
    path: str
    size: Size
    split: str
    annotations: tuple[Annotation, ...] = ()
    source_id: str | None = None
    source_offset: tuple[float, float] | None = None


@dataclass(frozen=True)
class Manifest:
    """The corpus: images, annotations, splits, free-form metadata."""

    fruit: str
    images: tuple[ImageRecord, ...] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> tuple[ImageRecord, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return tuple(r for r in self.images if r.split == name)

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.id: r for r in self.images}


@dataclass(frozen=True)
class PatchSpec:
    """How to sample sub-image patches from one raw image."""

    patch_size: Size
    count: int
    min_visible_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if not 0.0 <= self.min_visible_fraction <= 1.0:
            raise ValueError(
                "min_visible_fraction must lie in [0, 1], "
                f"got {self.min_visible_fraction}"
            )


# ---------------------------------------------------------------------------
# Manifest I/O


def _check_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _load_annotation(obj: Any, where: str, problems: list[str]) -> Annotation | None:
    if not isinstance(obj, dict):
        problems.append(f"{where}: annotation must be an object")
        return None
    for key in obj:
        if key not in _ANN_KEYS:
            problems.append(f"{where}: unknown field {key!r}")
            return None
    label = obj.get("label")
    shape = obj.get("shape")
    if not isinstance(label, str) or not label:
        problems.append(f"{where}: label must be a non-empty string")
        return None
    if shape == "box":
        coords = obj.get("box")
        if "circle" in obj:
            problems.append(f"{where}: box annotation must not carry a circle")
            return None
        if (
            not isinstance(coords, list)
            or len(coords) != 4
            or not all(_check_number(v) for v in coords)
        ):
            problems.append(f"{where}: box must be [x_min, y_min, x_max, y_max]")
            return None
        x0, y0, x1, y1 = (float(v) for v in coords)
        if x0 > x1 or y0 > y1:
            problems.append(f"{where}: box extents invalid ({coords})")
            return None
        return Annotation.from_box(label, Box(x0, y0, x1, y1))
    if shape == "circle":
        coords = obj.get("circle")
        if "box" in obj:
            problems.append(f"{where}: circle annotation must not carry a box")
            return None
        if (
            not isinstance(coords, list)
            or len(coords) != 3
            or not all(_check_number(v) for v in coords)
        ):
            problems.append(f"{where}: circle must be [cx, cy, r]")
            return None
        cx, cy, r = (float(v) for v in coords)
        if r <= 0:
            problems.append(f"{where}: circle radius must be positive, got {r}")
            return None
        return Annotation.from_circle(label, Circle(cx, cy, r))
    problems.append(f"{where}: shape must be 'box' or 'circle', got {shape!r}")
    return None


def _load_image(obj: Any, where: str, problems: list[str]) -> ImageRecord | None:
    if not isinstance(obj, dict):
        problems.append(f"{where}: image entry must be an object")
        return None
    for key in obj:
        if key not in _IMAGE_KEYS:
            problems.append(f"{where}: unknown field {key!r}")
            return None
    image_id = obj.get("id")
    path = obj.get("path")
    width = obj.get("width")
    height = obj.get("height")
    split = obj.get("split")
    ok = True
    if not isinstance(image_id, str) or not image_id:
        problems.append(f"{where}: id must be a non-empty string")
        ok = False
    if not isinstance(path, str):
        problems.append(f"{where}: path must be a string")
        ok = False
    if not isinstance(width, int) or isinstance(width, bool) or width < 1:
        problems.append(f"{where}: width must be an integer >= 1")
        ok = False
    if not isinstance(height, int) or isinstance(height, bool) or height < 1:
        problems.append(f"{where}: height must be an integer >= 1")
        ok = False
    if split not in SPLITS:
        problems.append(f"{where}: split must be one of {SPLITS}, got {split!r}")
        ok = False
    raw_annotations = obj.get("annotations", [])
    if not isinstance(raw_annotations, list):
        problems.append(f"{where}: annotations must be a list")
        ok = False
        raw_annotations = []

    source_id = None
    source_offset = None
    if "source" in obj:
        source = obj["source"]
        if (
            not isinstance(source, dict)
            or set(source) != _SOURCE_KEYS
            or not isinstance(source.get("id"), str)
            or not isinstance(source.get("offset"), list)
            or len(source["offset"]) != 2
            or not all(_check_number(v) for v in source["offset"])
        ):
            problems.append(f"{where}: source must be {{'id': str, 'offset': [x, y]}}")
            ok = False
        else:
            source_id = source["id"]
            source_offset = (float(source["offset"][0]), float(source["offset"][1]))

    annotations = []
    for j, raw in enumerate(raw_annotations):
        ann = _load_annotation(raw, f"{where}.annotations[{j}]", problems)
        if ann is None:
            ok = False
        else:
            annotations.append(ann)
    if not ok:
        return None

    size = Size(width, height)
    for j, ann in enumerate(annotations):
        if clip_box(ann.box, size) is None:
            problems.append(
                f"{where}.annotations[{j}]: box lies entirely outside the "
                f"{width}x{height} image"
            )
            ok = False
    if not ok:
        return None
    return ImageRecord(
        id=image_id,
        path=path,
        size=size,
        split=split,
        annotations=tuple(annotations),
        source_id=source_id,
        source_offset=source_offset,
    )


def load_manifest(data: bytes | str) -> Manifest:
    """Parse and validate a manifest document.

    Raises ManifestParseError for malformed JSON (with line/column) and
    ManifestValidationError listing every schema or invariant violation.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(
            f"malformed manifest JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}"
        ) from exc

    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ManifestValidationError(["top level must be a JSON object"])
    for key in doc:
        if key not in _TOP_KEYS:
            problems.append(f"unknown field {key!r}")
    version = doc.get("version")
    if version != MANIFEST_VERSION:
        problems.append(f"version must be {MANIFEST_VERSION}, got {version!r}")
    fruit = doc.get("fruit")
    if not isinstance(fruit, str) or not fruit:
        problems.append("fruit must be a non-empty string")
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        problems.append("metadata must be an object")
        metadata = {}
    raw_images = doc.get("images")
    if not isinstance(raw_images, list):
        problems.append("images must be a list")
        raw_images = []

    records: list[ImageRecord] = []
    for i, raw in enumerate(raw_images):
        record = _load_image(raw, f"images[{i}]", problems)
        if record is not None:
            records.append(record)

    seen: dict[str, int] = {}
    for record in records:
        seen[record.id] = seen.get(record.id, 0) + 1
    for image_id, count in seen.items():
        if count > 1:
            problems.append(f"duplicate image id {image_id!r} ({count} occurrences)")

    if problems:
        raise ManifestValidationError(problems)
    return Manifest(
        fruit=fruit, images=tuple(records), metadata=metadata, version=MANIFEST_VERSION
    )


def _annotation_to_obj(ann: Annotation) -> dict[str, Any]:
    if ann.shape == "circle":
        assert ann.circle is not None
        return {
            "label": ann.label,
            "shape": "circle",
            "circle": [ann.circle.cx, ann.circle.cy, ann.circle.r],
        }
    return {
        "label": ann.label,
        "shape": "box",
        "box": list(ann.box.as_tuple()),
    }


def _image_to_obj(record: ImageRecord) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": record.id,
        "path": record.path,
        "width": record.size.width,
        "height": record.size.height,
        "split": record.split,
        "annotations": [_annotation_to_obj(a) for a in record.annotations],
    }
    if record.source_id is not None:
        obj["source"] = {
            "id": record.source_id,
            "offset": list(record.source_offset or (0.0, 0.0)),
        }
    return obj


def save_manifest(manifest: Manifest) -> bytes:
    """Serialize a manifest to its canonical byte form."""
    doc = {
        "version": manifest.version,
        "fruit": manifest.fruit,
        "images": [_image_to_obj(r) for r in manifest.images],
        "metadata": canonical.sorted_tree(dict(manifest.metadata)),
    }
    return canonical.dumps(doc, places=4)


# ---------------------------------------------------------------------------
# Sampling


def _patch_annotation(
    ann: Annotation, index: int, source_id: str, origin: tuple[int, int], patch: Size,
    min_visible_fraction: float,
) -> Annotation | None:
    original_area = ann.box.area
    if original_area <= 0:
        return None
    local = translate_box(ann.box, -origin[0], -origin[1])
    clipped = clip_box(local, patch)
    if clipped is None:
        return None
    if clipped.area / original_area < min_visible_fraction:
        return None
    ref = f"{source_id}[{index}]"
    if ann.shape == "circle" and clipped.area == original_area:
        # Fully visible circles stay circles; partial ones become boxes.
        assert ann.circle is not None
        circle = Circle(ann.circle.cx - origin[0], ann.circle.cy - origin[1], ann.circle.r)
        return Annotation(
            label=ann.label, shape="circle", box=clipped, circle=circle, source_ref=ref
        )
    return Annotation(label=ann.label, shape="box", box=clipped, source_ref=ref)


def sample_subimages(record: ImageRecord, spec: PatchSpec) -> list[ImageRecord]:
    """Sample ``spec.count`` patches with uniform random integer origins.

    Patches always lie fully inside the source image. Annotations are
    clipped into patch-local coordinates and kept only when the visible
    fraction of their area is at least ``spec.min_visible_fraction``.
    Deterministic per (record id, seed).
    """
    pw, ph = spec.patch_size.width, spec.patch_size.height
    sw, sh = record.size.width, record.size.height
    if pw > sw or ph > sh:
        raise ValueError(
            f"patch {pw}x{ph} does not fit in source image {sw}x{sh} ({record.id})"
        )
    rng = np.random.default_rng(derive_seed(spec.seed, "patch", record.id))
    patches: list[ImageRecord] = []
    for index in range(spec.count):
        x0 = int(rng.integers(0, sw - pw + 1))
        y0 = int(rng.integers(0, sh - ph + 1))
        kept = []
        for j, ann in enumerate(record.annotations):
            patched = _patch_annotation(
                ann, j, record.id, (x0, y0), spec.patch_size, spec.min_visible_fraction
            )
            if patched is not None:
                kept.append(patched)
        patches.append(
            ImageRecord(
                id=f"{record.id}-p{index:03d}-s{spec.seed}",
                path=record.path,
                size=spec.patch_size,
                split=record.split,
                annotations=tuple(kept),
                source_id=record.id,
                source_offset=(float(x0), float(y0)),
            )
        )
    return patches


def discard_empty(records: Iterable[ImageRecord]) -> list[ImageRecord]:
    """Drop records without annotations, preserving order.

    Applied to the training split only in the pipeline; validation and
    test splits keep their empty images.
    """
    return [r for r in records if r.annotations]


def draw_training_subset(
    records: Sequence[ImageRecord], n: int, seed: int
) -> list[ImageRecord]:
    """Draw n distinct records uniformly without replacement."""
    if n < 1:
        raise ValueError(f"subset size must be >= 1, got {n}")
    if n > len(records):
        raise ValueError(
            f"cannot draw {n} records from a pool of {len(records)}"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(records), size=n, replace=False)
    return [records[i] for i in idx]


def with_split(record: ImageRecord, split: str) -> ImageRecord:
    """Copy of a record reassigned to another split."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
    return replace(record, split=split)

"""Synthetic orchard scenes shared by the test suite.

Scenes are lists of non-overlapping fruit boxes placed inside a raw-image
frame, plus manifest builders around them. Everything is seeded, so any
fixture derived here is stable across runs.
"""

from __future__ import annotations

import numpy as np

from orchardtk import Annotation, Box, ImageRecord, Manifest, Size

#: Raw mango frame size used throughout (matches the tiled-run fixtures).
MANGO_FRAME = Size(3296, 2472)

#: The tree-image fixture: 56 fruit; with the oracle seeded as below,
#: exactly two fruit are dropped, reproducing the 54-detection scenario.
TREE_IMAGE_ID = "mango-tree-01"
TREE_FRUIT_COUNT = 56
TREE_SCENE_SEED = 7
TREE_ORACLE_DROP_RATE = 0.05
TREE_ORACLE_SEED = 5  # frozen: exactly 2 of the 56 fruit are dropped


def random_scene(
    rng: np.random.Generator,
    frame: Size = MANGO_FRAME,
    n_fruit: int = 56,
    side_range: tuple[float, float] = (20.0, 50.0),
    margin: float = 2.0,
) -> list[Box]:
    """Place ``n_fruit`` disjoint boxes fully inside the frame.

    Rejection-samples centers until boxes are pairwise disjoint; sides stay
    within ``side_range`` so the standard 50 px tile overlap keeps every
    fruit whole in at least one tile.
    """
    boxes: list[Box] = []
    attempts = 0
    while len(boxes) < n_fruit:
        attempts += 1
        if attempts > 100_000:
            raise RuntimeError("scene too crowded to place disjoint fruit")
        w = float(rng.uniform(*side_range))
        h = float(rng.uniform(*side_range))
        cx = float(rng.uniform(margin + w / 2, frame.width - margin - w / 2))
        cy = float(rng.uniform(margin + h / 2, frame.height - margin - h / 2))
        box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        if all(
            box.x_max <= other.x_min
            or other.x_max <= box.x_min
            or box.y_max <= other.y_min
            or other.y_max <= box.y_min
            for other in boxes
        ):
            boxes.append(box)
    return boxes


def clustered_scene(
    rng: np.random.Generator,
    frame: Size = Size(1000, 1000),
    n_clusters: int = 6,
    n_singles: int = 10,
    side: float = 30.0,
) -> list[Box]:
    """Scene with overlapping fruit pairs (clusters) plus isolated fruit."""
    boxes: list[Box] = []
    for _ in range(n_clusters):
        cx = float(rng.uniform(side, frame.width - 2 * side))
        cy = float(rng.uniform(side, frame.height - 2 * side))
        boxes.append(Box(cx, cy, cx + side, cy + side))
        # Partner offset under half a side: IoU comfortably above 0.2.
        dx = float(rng.uniform(0.1, 0.4)) * side
        dy = float(rng.uniform(0.1, 0.4)) * side
        boxes.append(Box(cx + dx, cy + dy, cx + dx + side, cy + dy + side))
    for _ in range(n_singles):
        cx = float(rng.uniform(0, frame.width - side))
        cy = float(rng.uniform(0, frame.height - side))
        boxes.append(Box(cx, cy, cx + side, cy + side))
    return boxes


def scene_record(
    image_id: str,
    boxes: list[Box],
    frame: Size = MANGO_FRAME,
    split: str = "test",
) -> ImageRecord:
    return ImageRecord(
        id=image_id,
        path=f"{image_id}.png",
        size=frame,
        split=split,
        annotations=tuple(Annotation.from_box("fruit", b) for b in boxes),
    )


def tree_scene_boxes() -> list[Box]:
    """The 56 disjoint fruit of the tree-image fixture."""
    rng = np.random.default_rng(TREE_SCENE_SEED)
    return random_scene(rng, MANGO_FRAME, TREE_FRUIT_COUNT, side_range=(24.0, 44.0))


def tree_scene_manifest(split: str = "test") -> Manifest:
    record = scene_record(TREE_IMAGE_ID, tree_scene_boxes(), split=split)
    return Manifest(fruit="mango", images=(record,))


def multi_image_manifest(
    seed: int = 11,
    n_train: int = 12,
    n_val: int = 3,
    n_test: int = 4,
    frame: Size = Size(900, 700),
    fruit_per_image: int = 8,
) -> Manifest:
    """Small corpus with all three splits for pipeline and ablation tests."""
    rng = np.random.default_rng(seed)
    records = []
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for i in range(count):
            boxes = random_scene(
                rng, frame, fruit_per_image, side_range=(18.0, 40.0)
            )
            records.append(scene_record(f"{split}-{i:02d}", boxes, frame, split))
    return Manifest(fruit="mango", images=tuple(records))

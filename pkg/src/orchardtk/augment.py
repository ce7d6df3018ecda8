"""Label-preserving training-time transforms.

Horizontal flip, shorter-side rescale and PCA colour jitter, plus the
dataset colour statistics the jitter is built from. Images are numpy
arrays of shape (H, W, 3); flip and rescale accept any dtype, the colour
ops work on float intensities normalized to [0, 1].

Jitter magnitudes follow the uniform-alpha convention: each draw picks one
alpha triple per image from U[-a, +a] with a = sqrt(0.3), which gives the
documented 0.1 variance per component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import cv2
import numpy as np

from .dataset import Annotation
from .geometry import Box, Circle, circle_to_box, scale_box

#: Half-width of the uniform alpha distribution: Var(U[-a, a]) = a^2 / 3,
#: so a = sqrt(0.3) yields variance 0.1.
DEFAULT_ALPHA_HALFWIDTH = math.sqrt(0.3)

#: Shorter-side targets used for multi-scale training draws.
DEFAULT_SCALE_CHOICES = (300, 500, 700)

#: Objects below one backbone stride are undetectable, so rescale targets
#: must keep the shorter side at or above this.
MIN_SCALE_TARGET = 16


@dataclass(eq=False)
class ColorStats:
    """Channel mean plus eigendecomposition of the RGB covariance.

    ``eigvecs`` columns are the principal directions, matching ``eigvals``
    sorted in descending order.
    """

    mean: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "mean": [float(v) for v in self.mean],
            "eigvals": [float(v) for v in self.eigvals],
            "eigvecs": [[float(v) for v in row] for row in self.eigvecs],
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ColorStats":
        return cls(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            eigvals=np.asarray(obj["eigvals"], dtype=np.float64),
            eigvecs=np.asarray(obj["eigvecs"], dtype=np.float64),
        )


@dataclass(frozen=True)
class AugmentationSpec:
    """Random-augmentation policy applied independently per image draw."""

    flip_probability: float = 0.5
    scale_choices: tuple[int, ...] = DEFAULT_SCALE_CHOICES
    pca_alpha_halfwidth: float = DEFAULT_ALPHA_HALFWIDTH
    pca_enabled: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(
                f"flip_probability must lie in [0, 1], got {self.flip_probability}"
            )
        if not self.scale_choices:
            raise ValueError("scale_choices must be non-empty")
        if any(s < MIN_SCALE_TARGET for s in self.scale_choices):
            raise ValueError(
                f"scale targets below {MIN_SCALE_TARGET} px make objects undetectable"
            )
        if self.pca_alpha_halfwidth < 0:
            raise ValueError("pca_alpha_halfwidth must be non-negative")


@dataclass(frozen=True)
class AppliedAugmentation:
    """The concrete draw for one image."""

    flipped: bool
    chosen_shorter_side: int
    alphas: tuple[float, float, float]


def compute_color_stats(pixel_sample: Sequence | np.ndarray) -> ColorStats:
    """Mean and PCA of an RGB pixel sample with intensities in [0, 1].

    Uses the population covariance (divisor N); eigenvalues come back
    sorted descending with tiny negative values clipped to zero.
    """
    arr = np.asarray(pixel_sample, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) pixel sample, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError("need at least 2 pixels to estimate colour statistics")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / arr.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    return ColorStats(mean=mean, eigvals=eigvals, eigvecs=eigvecs)


def sample_augmentation(spec: AugmentationSpec, seed: int) -> AppliedAugmentation:
    """Draw one augmentation: flip, shorter-side target and alpha triple.

    Deterministic per seed; draw order is fixed (flip, scale, alphas).
    """
    rng = np.random.default_rng(seed % 2**64)
    flipped = bool(rng.random() < spec.flip_probability)
    choices = sorted(spec.scale_choices)
    side = int(choices[rng.integers(len(choices))])
    half = spec.pca_alpha_halfwidth
    alphas = tuple(float(a) for a in rng.uniform(-half, half, size=3))
    return AppliedAugmentation(flipped=flipped, chosen_shorter_side=side, alphas=alphas)


def flip_box(box: Box, width: float) -> Box:
    """Mirror a box about the vertical axis of a width-``width`` image."""
    return Box(width - box.x_max, box.y_min, width - box.x_min, box.y_max)


def _flip_annotation(ann: Annotation, width: float) -> Annotation:
    if ann.shape == "circle" and ann.circle is not None:
        circle = Circle(width - ann.circle.cx, ann.circle.cy, ann.circle.r)
        return Annotation(
            label=ann.label, shape="circle", box=circle_to_box(circle),
            circle=circle, source_ref=ann.source_ref,
        )
    return Annotation(
        label=ann.label, shape="box", box=flip_box(ann.box, width),
        source_ref=ann.source_ref,
    )


def apply_flip(
    image: np.ndarray, annotations: Sequence[Annotation]
) -> tuple[np.ndarray, list[Annotation]]:
    """Mirror an image and its annotations about the vertical axis."""
    flipped = np.ascontiguousarray(image[:, ::-1])
    width = float(image.shape[1])
    return flipped, [_flip_annotation(a, width) for a in annotations]


def _scale_annotation(ann: Annotation, factor: float) -> Annotation:
    if ann.shape == "circle" and ann.circle is not None:
        circle = Circle(ann.circle.cx * factor, ann.circle.cy * factor, ann.circle.r * factor)
        return Annotation(
            label=ann.label, shape="circle", box=circle_to_box(circle),
            circle=circle, source_ref=ann.source_ref,
        )
    return Annotation(
        label=ann.label, shape="box", box=scale_box(ann.box, factor),
        source_ref=ann.source_ref,
    )


def rescale_shorter_side(
    image: np.ndarray, annotations: Sequence[Annotation], target: int
) -> tuple[np.ndarray, list[Annotation], float]:
    """Rescale so the shorter side is exactly ``target`` pixels.

    Bilinear resampling; the longer side rounds to the nearest pixel and
    annotations scale by the same continuous factor.
    """
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    h, w = image.shape[:2]
    factor = target / min(w, h)
    new_w = target if w <= h else int(round(w * factor))
    new_h = target if h < w else int(round(h * factor))
    resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    return resized, [_scale_annotation(a, factor) for a in annotations], factor


def apply_pca_jitter(
    image: np.ndarray, stats: ColorStats, alphas: Sequence[float]
) -> np.ndarray:
    """Shift every pixel along the colour principal components.

    The shift is eigvecs @ (alphas * eigvals), identical for all pixels;
    channels are clamped back to [0, 1]. Expects a float image in [0, 1].
    """
    if not np.issubdtype(image.dtype, np.floating):
        raise ValueError("apply_pca_jitter expects a float image in [0, 1]")
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (3,):
        raise ValueError(f"expected 3 alphas, got shape {alphas.shape}")
    delta = stats.eigvecs @ (alphas * stats.eigvals)
    return np.clip(image + delta.astype(image.dtype), 0.0, 1.0)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orchardtk import (
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

coord = st.floats(min_value=-1000, max_value=1000, allow_nan=False, width=32)
extent = st.floats(min_value=0, max_value=500, allow_nan=False, width=32)


@st.composite
def boxes(draw):
    x0 = draw(coord)
    y0 = draw(coord)
    return Box(x0, y0, x0 + draw(extent), y0 + draw(extent))


class TestBox:
    def test_rejects_inverted_extents(self):
        with pytest.raises(ValueError):
            Box(10, 0, 5, 10)
        with pytest.raises(ValueError):
            Box(0, 10, 10, 5)

    def test_degenerate_is_legal(self):
        b = Box(5, 5, 5, 9)
        assert b.area == 0.0

    def test_properties(self):
        b = Box(1, 2, 4, 8)
        assert (b.width, b.height, b.area) == (3, 6, 18)
        assert b.center == (2.5, 5.0)


class TestIou:
    def test_identical(self):
        assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0

    def test_axis_overlap_58_percent_gives_iou_point_two(self):
        # Equal boxes shifted so each axis overlaps by 1/sqrt(3) ~ 57.74%.
        shift = 100.0 * (1.0 - 1.0 / math.sqrt(3.0))
        a = Box(0, 0, 100, 100)
        b = Box(shift, shift, shift + 100, shift + 100)
        assert iou(a, b) == pytest.approx(0.200, abs=1e-3)

    def test_both_degenerate(self):
        assert iou(Box(1, 1, 1, 1), Box(1, 1, 1, 1)) == 0.0

    def test_one_degenerate(self):
        assert iou(Box(0, 0, 0, 10), Box(0, 0, 10, 10)) == 0.0

    @given(boxes(), boxes())
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(boxes(), boxes())
    def test_range(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0

    def test_self_iou_of_nondegenerate(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x0, y0 = rng.uniform(-500, 500, 2)
            w, h = rng.uniform(1, 200, 2)
            b = Box(x0, y0, x0 + w, y0 + h)
            assert iou(b, b) == 1.0

    def test_invariant_under_joint_translation_and_scaling(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            x0, y0, x1, y1 = rng.uniform(0, 300, 4)
            a = Box(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
            x0, y0, x1, y1 = rng.uniform(0, 300, 4)
            b = Box(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
            base = iou(a, b)
            dx, dy = rng.uniform(-1000, 1000, 2)
            factor = float(rng.uniform(0.01, 50))
            moved = iou(translate_box(a, dx, dy), translate_box(b, dx, dy))
            scaled = iou(scale_box(a, factor), scale_box(b, factor))
            assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)
            assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)


class TestCircleToBox:
    def test_basic(self):
        assert circle_to_box(Circle(50, 50, 10)) == Box(40, 40, 60, 60)

    def test_unclipped_at_origin(self):
        assert circle_to_box(Circle(0, 0, 5)) == Box(-5, -5, 5, 5)

    def test_apple_width(self):
        b = circle_to_box(Circle(100, 100, 18.5))
        assert b == Box(81.5, 81.5, 118.5, 118.5)
        assert b.width == 37.0

    def test_roundtrip_recovers_circle(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            # Dyadic values keep center/half-width extraction exact.
            cx = float(rng.integers(-400, 400)) + 0.25
            cy = float(rng.integers(-400, 400)) + 0.5
            r = float(rng.integers(1, 100)) / 4.0
            b = circle_to_box(Circle(cx, cy, r))
            assert b.center == (cx, cy)
            assert b.width / 2.0 == r
            assert b.height / 2.0 == r

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            Circle(0, 0, 0)


class TestClipBox:
    def test_clips_negative_corner(self):
        assert clip_box(Box(-5, -5, 5, 5), Size(100, 100)) == Box(0, 0, 5, 5)

    def test_inside_unchanged(self):
        assert clip_box(Box(10, 10, 20, 20), Size(100, 100)) == Box(10, 10, 20, 20)

    def test_outside_is_empty(self):
        assert clip_box(Box(200, 200, 300, 300), Size(100, 100)) is None

    def test_touching_border_is_empty(self):
        assert clip_box(Box(100, 0, 120, 50), Size(100, 100)) is None

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        bounds = Size(640, 480)
        for _ in range(500):
            x0, y0 = rng.uniform(-200, 700, 2)
            w, h = rng.uniform(0, 300, 2)
            clipped = clip_box(Box(x0, y0, x0 + w, y0 + h), bounds)
            if clipped is not None:
                assert clip_box(clipped, bounds) == clipped


class TestTranslateScale:
    def test_translate(self):
        assert translate_box(Box(10, 10, 40, 40), 450, 0) == Box(460, 10, 490, 40)

    def test_translate_identity(self):
        b = Box(1.5, 2.5, 3.5, 4.5)
        assert translate_box(b, 0, 0) == b

    def test_translate_inverse_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            # Integer-valued coordinates and offsets stay exact in floats.
            x0, y0 = (float(v) for v in rng.integers(-1000, 1000, 2))
            w, h = (float(v) for v in rng.integers(0, 500, 2))
            dx, dy = (float(v) for v in rng.integers(-5000, 5000, 2))
            b = Box(x0, y0, x0 + w, y0 + h)
            assert translate_box(translate_box(b, dx, dy), -dx, -dy) == b

    def test_scale(self):
        assert scale_box(Box(10, 10, 20, 20), 2) == Box(20, 20, 40, 40)

    def test_scale_identity(self):
        b = Box(1, 2, 3, 4)
        assert scale_box(b, 1) == b

    def test_scale_apple_patch_to_shorter_side_500(self):
        factor = 500 / 202
        scaled = scale_box(Box(0, 0, 202, 308), factor)
        assert scaled.x_max == pytest.approx(500.0, rel=1e-12)
        assert scaled.y_max == pytest.approx(308 * 500 / 202, rel=1e-12)

    def test_scale_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scale_box(Box(0, 0, 1, 1), 0)
        with pytest.raises(ValueError):
            scale_box(Box(0, 0, 1, 1), -2)


class TestIntersectBox:
    def test_partial(self):
        assert intersect_box(Box(0, 0, 10, 10), Box(5, 5, 15, 15)) == Box(5, 5, 10, 10)

    def test_disjoint(self):
        assert intersect_box(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) is None


class TestSize:
    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            Size(0, 10)

    def test_rejects_non_integer(self):
        with pytest.raises(ValueError):
            Size(10.5, 10)

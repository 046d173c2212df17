"""
Test script for box geometry.

Covers area/IoU arithmetic, the vectorised IoU helpers and an agreement
check against a rasterised cell-counting oracle.
"""

import numpy as np
import pytest

from app.back.exceptions import InvalidBoxError
from app.back.services.geometry import (
    BBox,
    area,
    boxes_to_array,
    from_xywh,
    iou,
    iou_matrix,
    pairwise_max_iou,
    to_xywh,
)


def test_area_examples():
    assert area(BBox(0, 0, 10, 10)) == 100
    assert area(BBox(3, 3, 3, 9)) == 0
    assert area(BBox(1, 2, 4, 8)) == 18


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, BBox(0, 0, 10, 10)) == 1.0
    assert iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BBox(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_is_symmetric_and_total_on_degenerate_boxes():
    a, b = BBox(1, 1, 7, 4), BBox(3, 0, 9, 9)
    assert iou(a, b) == iou(b, a)
    point = BBox(5, 5, 5, 5)
    assert iou(point, point) == 0.0


@pytest.mark.parametrize(
    "coords",
    [(0, 0, -1, 5), (0, 5, 5, 0), (float("nan"), 0, 1, 1), (0, 0, float("inf"), 1)],
)
def test_invalid_boxes_rejected(coords):
    with pytest.raises(InvalidBoxError):
        BBox(*coords)


def test_xywh_conversion():
    box = from_xywh(2, 3, 4, 5)
    assert box == BBox(2, 3, 6, 8)
    assert to_xywh(box) == (2.0, 3.0, 4.0, 5.0)


def _raster_iou(a, b, size=64):
    grid_a = np.zeros((size, size), dtype=bool)
    grid_b = np.zeros((size, size), dtype=bool)
    grid_a[int(a.y1):int(a.y2), int(a.x1):int(a.x2)] = True
    grid_b[int(b.y1):int(b.y2), int(b.x1):int(b.x2)] = True
    union = np.logical_or(grid_a, grid_b).sum()
    return 0.0 if union == 0 else np.logical_and(grid_a, grid_b).sum() / union


def _random_box(rng):
    x1, x2 = sorted(rng.integers(0, 65, size=2))
    y1, y2 = sorted(rng.integers(0, 65, size=2))
    return BBox(x1, y1, x2, y2)


def test_iou_agrees_with_raster_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(10_000):
        a, b = _random_box(rng), _random_box(rng)
        assert abs(iou(a, b) - _raster_iou(a, b)) < 1e-9


def test_iou_is_translation_invariant():
    rng = np.random.default_rng(99)
    for _ in range(2_000):
        a, b = _random_box(rng), _random_box(rng)
        dx, dy = rng.uniform(-500, 500, size=2)
        assert iou(a.shift(dx, dy), b.shift(dx, dy)) == pytest.approx(iou(a, b), abs=1e-9)


def test_iou_matrix_matches_scalar_iou_exactly():
    rng = np.random.default_rng(7)
    boxes = [_random_box(rng) for _ in range(40)]
    mat = iou_matrix(boxes_to_array(boxes), boxes_to_array(boxes))
    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            assert mat[i, j] == iou(a, b)


def test_pairwise_max_iou():
    boxes = [BBox(0, 0, 10, 10), BBox(5, 0, 15, 10), BBox(100, 100, 110, 110)]
    np.testing.assert_allclose(pairwise_max_iou(boxes), [1 / 3, 1 / 3, 0.0])
    assert pairwise_max_iou([BBox(0, 0, 1, 1)]).tolist() == [0.0]
    assert pairwise_max_iou([]).shape == (0,)

"""
Test script for training targets: positives, Gaussian mask, scale, offset and density.
"""

import math

import numpy as np
import pytest

from app.back.services.geometry import BBox, iou
from app.back.services.targets_service import (
    GroundTruthScene,
    build_targets,
    center_target,
    density_target,
    density_values,
    gaussian_mask,
    grid_shape,
    offset_target,
    positive_cells,
    scale_target,
)

R = 4


def scene_with(*boxes, width=64, height=64, ignore=None):
    return GroundTruthScene(
        image_width=width, image_height=height, boxes=list(boxes), ignore=ignore
    )


def box_centered(cx, cy, w, h):
    return BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def test_grid_shape():
    assert grid_shape(scene_with(width=66, height=40), R) == (10, 16)
    with pytest.raises(ValueError):
        grid_shape(scene_with(), 0)
    with pytest.raises(ValueError):
        grid_shape(scene_with(width=3, height=3), R)


def test_positive_cells_examples():
    assert sorted(positive_cells(2.5, 3.5, 16, 16)) == [(2, 3), (2, 4), (3, 3), (3, 4)]
    assert sorted(positive_cells(2.0, 3.0, 16, 16)) == [(2, 3), (2, 4), (3, 3), (3, 4)]
    # border objects lose the cells falling off the grid
    assert positive_cells(15.5, 15.5, 16, 16) == [(15, 15)]


def test_center_target_marks_four_positives():
    center, objects = center_target(scene_with(box_centered(10, 14, 8, 20)), R)
    assert center.shape == (16, 16)
    assert center.sum() == 4
    assert sorted(objects[0].cells) == [(2, 3), (2, 4), (3, 3), (3, 4)]
    assert objects[0].center == (2.5, 3.5)
    assert center[3, 2] and center[4, 3]


def test_empty_scene_targets():
    scene = scene_with()
    center, objects = center_target(scene, R)
    assert not center.any() and objects == []
    assert not gaussian_mask(scene, R).any()


def test_ignored_boxes_get_no_positives():
    scene = scene_with(box_centered(10, 14, 8, 20), box_centered(40, 40, 8, 20), ignore=[False, True])
    center, objects = center_target(scene, R)
    assert center.sum() == 4
    assert [obj.index for obj in objects] == [0]


def test_gaussian_mask_peaks_at_positives_and_decays():
    scene = scene_with(box_centered(10, 14, 8, 20), width=256, height=64)
    mask = gaussian_mask(scene, R)
    for x, y in [(2, 3), (3, 3), (2, 4), (3, 4)]:
        assert mask[y, x] == 1.0
    assert np.all((mask >= 0) & (mask <= 1))
    # sigma_x = max(8 / 24, 0.5) = 0.5 cells; column 40 is far beyond 6 sigma
    assert np.all(mask[:, 40:] < 1e-6)


def test_scale_target_block():
    scale, owner = scale_target(scene_with(box_centered(30, 40, 20, 64), width=128, height=128), R)
    assert scale.shape == (32, 32, 1)
    block = owner >= 0
    assert block.sum() == 16
    np.testing.assert_allclose(scale[block, 0], math.log(64))
    assert scale[block, 0][0] == pytest.approx(4.15888, abs=1e-5)


def test_scale_target_unit_height_is_zero_and_width_channel():
    scale, owner = scale_target(scene_with(box_centered(30, 30, 8, 1)), R, predict_width=True)
    block = owner >= 0
    np.testing.assert_allclose(scale[block, 0], 0.0)
    np.testing.assert_allclose(scale[block, 1], math.log(8))


def test_scale_target_rejects_zero_height():
    with pytest.raises(ValueError):
        scale_target(scene_with(BBox(10, 10, 20, 10)), R)


def test_contested_scale_cells_hold_smaller_object():
    big = box_centered(30, 30, 24, 60)
    small = box_centered(34, 30, 8, 20)
    scale, owner = scale_target(scene_with(big, small, width=128, height=128), R)
    contested_cell = (7, 8)  # (y, x) inside both 4x4 blocks
    assert owner[contested_cell] == 1
    assert scale[contested_cell][0] == pytest.approx(math.log(20))


def test_offset_examples():
    offset, owner = offset_target(scene_with(box_centered(10, 14, 8, 20)), R)
    np.testing.assert_allclose(offset[3, 2], (0.5, 0.5))
    np.testing.assert_allclose(offset[4, 3], (-0.5, -0.5))
    assert (owner >= 0).sum() == 4

    offset, _ = offset_target(scene_with(box_centered(9, 15, 8, 20)), R)
    np.testing.assert_allclose(offset[3, 3], (-0.75, 0.75))

    offset, _ = offset_target(scene_with(box_centered(8, 12, 8, 20)), R)
    np.testing.assert_allclose(offset[3, 2], (0.0, 0.0))


def test_offsets_lie_in_open_unit_interval_for_non_integer_centers():
    rng = np.random.default_rng(5)
    boxes = [box_centered(c[0], c[1], 10, 20) for c in rng.uniform(12, 116, size=(30, 2))]
    offset, owner = offset_target(scene_with(*boxes, width=128, height=128), R)
    values = offset[owner >= 0]
    assert np.all(np.abs(values) < 1.0)


def test_density_examples():
    assert density_values(scene_with(BBox(0, 0, 10, 10))).tolist() == [0.0]
    pair = density_values(scene_with(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)))
    np.testing.assert_allclose(pair, [1 / 3, 1 / 3])

    a, b, c = BBox(100, 0, 140, 100), BBox(110, 0, 150, 100), BBox(140, 0, 160, 100)
    assert iou(a, b) == pytest.approx(0.6)
    triple = density_values(scene_with(a, b, c, width=200, height=120))
    np.testing.assert_allclose(triple, [0.6, 0.6, iou(b, c)])


def test_density_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(0, 51))
        boxes = []
        for _ in range(n):
            x1, y1 = rng.uniform(0, 90, size=2)
            w, h = rng.uniform(1, 30, size=2)
            boxes.append(BBox(x1, y1, min(x1 + w, 128), min(y1 + h, 128)))
        scene = scene_with(*boxes, width=128, height=128)
        expected = [
            max((iou(a, b) for j, b in enumerate(boxes) if j != i), default=0.0)
            for i, a in enumerate(boxes)
        ]
        assert density_values(scene).tolist() == expected


def test_density_target_grid():
    densities, grid, owner = density_target(scene_with(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)), R)
    assert (owner >= 0).sum() > 0
    np.testing.assert_allclose(grid[owner >= 0], 1 / 3)


def test_build_targets_bundle():
    maps = build_targets(scene_with(box_centered(10, 14, 8, 20), box_centered(40, 30, 12, 30)), R, True)
    assert (maps.grid_height, maps.grid_width) == (16, 16)
    assert maps.scale_channels == 2
    assert maps.center.sum() == 8
    assert len(maps.objects) == 2
    assert maps.offset_valid.sum() == 8
    assert np.array_equal(maps.center, maps.offset_valid)

"""
Test script for the training losses.

Each loss is checked on a perfect-prediction fixture (exactly 0) and on a
hand-derived value.
"""

import math

import numpy as np
import pytest

from app.back.exceptions import DegenerateEmbeddingError, ShapeMismatchError
from app.back.services.geometry import BBox
from app.back.services.loss_service import (
    LossWeights,
    PredictedMaps,
    attribute_loss,
    center_loss,
    density_loss,
    diversity_loss,
    joint_loss,
    offset_loss,
    scale_loss,
    smooth_l1,
)
from app.back.services.targets_service import GroundTruthScene, build_targets


def targets_for(*boxes, predict_width=False):
    scene = GroundTruthScene(image_width=64, image_height=64, boxes=list(boxes))
    return build_targets(scene, r=4, predict_width=predict_width)


def predicted(targets, m=4, **grids):
    rows, cols = targets.center.shape
    base = dict(
        center_prob=np.zeros((rows, cols)),
        scale=np.zeros((rows, cols, targets.scale_channels)),
        offset=np.zeros((rows, cols, 2)),
        attribute=np.zeros((rows, cols, m)),
    )
    base.update(grids)
    return PredictedMaps(image_id=targets.image_id, **base)


def perfect(targets, m=4):
    """Prediction matching every target, with orthogonal embeddings of the right norm."""
    attribute = np.zeros(targets.center.shape + (m,))
    for k, obj in enumerate(targets.objects):
        for x, y in obj.cells:
            attribute[y, x, k % m] = obj.density
    return predicted(
        targets,
        m,
        center_prob=targets.center.astype(float),
        scale=targets.scale.copy(),
        offset=targets.offset.copy(),
        attribute=attribute,
    )


ONE = BBox(6, 4, 14, 24)            # real center (2.5, 3.5) at r = 4
FAR = BBox(40, 30, 52, 60)
# Overlapping pair (IoU 3/7) whose positive blocks do not touch
PAIR_A = BBox(0, 4, 20, 24)
PAIR_B = BBox(8, 4, 28, 24)


def test_smooth_l1_examples():
    assert smooth_l1(0.0) == 0.0
    assert smooth_l1(0.5) == pytest.approx(0.125)
    assert smooth_l1(2.0) == pytest.approx(1.5)
    assert smooth_l1(-2.0) == pytest.approx(1.5)
    np.testing.assert_allclose(smooth_l1(np.array([0.5, 1.0])), [0.125, 0.5])


def test_center_loss_perfect_prediction_is_zero():
    targets = targets_for(ONE, FAR)
    assert center_loss(perfect(targets), targets) == 0.0


def test_center_loss_half_confident_positives():
    targets = targets_for(ONE)
    prob = np.where(targets.center, 0.5, 0.0)
    loss = center_loss(predicted(targets, center_prob=prob), targets)
    assert loss == pytest.approx(4 * 0.25 * math.log(2), abs=1e-6)
    assert loss == pytest.approx(0.693147, abs=1e-6)


def test_center_loss_without_objects_is_zero(caplog):
    targets = targets_for()
    prob = np.full(targets.center.shape, 0.3)
    assert center_loss(predicted(targets, center_prob=prob), targets) == 0.0
    assert "no positives" in caplog.text


def test_center_loss_negatives_near_center_are_down_weighted():
    targets = targets_for(ONE)
    near, far = (2, 2), (12, 12)  # (y, x)
    prob_near = np.where(targets.center, 1.0, 0.0)
    prob_near[near] = 0.5
    prob_far = np.where(targets.center, 1.0, 0.0)
    prob_far[far] = 0.5
    assert center_loss(predicted(targets, center_prob=prob_near), targets) < center_loss(
        predicted(targets, center_prob=prob_far), targets
    )


def test_scale_loss_examples():
    targets = targets_for(PAIR_A, PAIR_B)
    assert scale_loss(perfect(targets), targets) == 0.0
    off = predicted(targets, scale=targets.scale + 0.5)
    assert scale_loss(off, targets) == pytest.approx(0.125)


def test_offset_loss_examples():
    targets = targets_for(ONE)
    assert offset_loss(perfect(targets), targets) == 0.0
    off = predicted(targets, offset=targets.offset + 1.0)
    assert offset_loss(off, targets) == pytest.approx(1.0)


def test_density_loss_examples():
    targets = targets_for(ONE)
    obj = targets.objects[0].model_copy(update={"density": 0.3})
    targets = targets.model_copy(update={"objects": [obj]})
    attribute = np.zeros(targets.center.shape + (4,))
    for x, y in obj.cells:
        attribute[y, x, 0] = 0.8
    assert density_loss(predicted(targets, attribute=attribute), targets) == pytest.approx(0.5)

    isolated = targets_for(ONE)
    assert density_loss(predicted(isolated), isolated) == 0.0


def _with_embeddings(targets, per_object):
    attribute = np.zeros(targets.center.shape + (4,))
    for obj, vectors in zip(targets.objects, per_object):
        for (x, y), v in zip(obj.cells, vectors):
            attribute[y, x] = v
    return predicted(targets, attribute=attribute)


def test_diversity_loss_separated_objects_is_zero():
    targets = targets_for(ONE, FAR)
    pred = _with_embeddings(targets, [[(1, 0, 0, 0)] * 4, [(0, 1, 0, 0)] * 4])
    assert diversity_loss(pred, targets) == 0.0


def test_diversity_loss_identical_means_double_counts_push():
    targets = targets_for(ONE, FAR)
    pred = _with_embeddings(targets, [[(1, 0, 0, 0)] * 4, [(2, 0, 0, 0)] * 4])
    assert diversity_loss(pred, targets, margin=1.0) == pytest.approx(2.0)


def test_diversity_loss_pull_term():
    targets = targets_for(ONE)
    rotated = (math.cos(0.2), math.sin(0.2), 0.0, 0.0)
    vectors = [(1.0, 0.0, 0.0, 0.0)] * 3 + [rotated]
    pred = _with_embeddings(targets, [vectors])
    unit = np.array(vectors)
    expected = float(np.sum((unit - unit.mean(axis=0)) ** 2))
    assert diversity_loss(pred, targets) == pytest.approx(expected, abs=1e-12)
    assert expected > 0


def test_diversity_loss_rejects_zero_embeddings():
    targets = targets_for(ONE)
    with pytest.raises(DegenerateEmbeddingError):
        diversity_loss(predicted(targets), targets)


def test_center_loss_is_monotone_in_each_cell():
    targets = targets_for(ONE, FAR)
    rng = np.random.default_rng(21)
    base = rng.uniform(0.05, 0.9, size=targets.center.shape)
    positives = np.argwhere(targets.center)
    negatives = np.argwhere(~targets.center & (targets.gaussian_mask < 1.0))
    before = center_loss(predicted(targets, center_prob=base), targets)
    for cells, direction in ((positives, -1), (negatives[rng.choice(len(negatives), 20)], 1)):
        for y, x in cells:
            raised = base.copy()
            raised[y, x] += 0.05
            after = center_loss(predicted(targets, center_prob=raised), targets)
            assert np.sign(after - before) == direction


def test_losses_ignore_unsupervised_cells():
    targets = targets_for(PAIR_A, PAIR_B, predict_width=True)
    rng = np.random.default_rng(5)
    base = perfect(targets)
    noisy = dict(
        center_prob=base.center_prob,
        scale=base.scale + rng.normal(0.0, 0.3, size=base.scale.shape),
        offset=base.offset + rng.normal(0.0, 0.3, size=base.offset.shape),
        attribute=base.attribute + rng.normal(0.0, 0.05, size=base.attribute.shape),
    )
    clean = predicted(targets, **noisy)

    positive = np.zeros(targets.center.shape, dtype=bool)
    for obj in targets.objects:
        for x, y in obj.cells:
            positive[y, x] = True
    garbage = {name: grid.copy() for name, grid in noisy.items()}
    for name, unsupervised in (
        ("scale", ~targets.scale_valid),
        ("offset", ~targets.offset_valid),
        ("attribute", ~positive),
    ):
        grid = garbage[name]
        grid[unsupervised] = rng.uniform(-1e3, 1e3, size=grid[unsupervised].shape)
    dirty = predicted(targets, **garbage)

    assert (~targets.scale_valid).any() and (~targets.offset_valid).any()
    assert scale_loss(clean, targets) > 0.0
    for loss in (center_loss, scale_loss, offset_loss, density_loss, diversity_loss):
        assert loss(dirty, targets) == loss(clean, targets)


def test_diversity_loss_ignores_object_order():
    targets = targets_for(ONE, FAR, BBox(20, 36, 30, 60))
    assert len(targets.objects) == 3
    rng = np.random.default_rng(8)
    pred = predicted(targets, attribute=rng.normal(size=targets.center.shape + (4,)))
    expected = diversity_loss(pred, targets, margin=3.0)
    assert expected > 0.0
    for _ in range(5):
        order = rng.permutation(3)
        shuffled = targets.model_copy(update={"objects": [targets.objects[i] for i in order]})
        assert diversity_loss(pred, shuffled, margin=3.0) == pytest.approx(expected, rel=1e-12)


def test_attribute_loss_weighting():
    weights = LossWeights()
    assert weights.attribute_total(0.5, 2.0) == pytest.approx(4.5)
    assert LossWeights(density=0.0).attribute_total(0.5, 2.0) == pytest.approx(2.0)
    targets = targets_for(PAIR_A, PAIR_B)
    assert attribute_loss(perfect(targets), targets) == 0.0


def test_joint_loss_weights():
    assert LossWeights().combine(1.0, 1.0, 1.0, 1.0) == pytest.approx(1.05, abs=1e-6)


def test_joint_loss_perfect_prediction():
    targets = targets_for(PAIR_A, PAIR_B, predict_width=True)
    breakdown = joint_loss(perfect(targets), targets)
    assert breakdown.total == 0.0
    assert breakdown.objects == 2
    assert breakdown.warnings == []


def test_shape_mismatch():
    targets = targets_for(ONE)
    small = GroundTruthScene(image_width=32, image_height=32, boxes=[])
    other = build_targets(small, r=4)
    with pytest.raises(ShapeMismatchError):
        center_loss(predicted(other), targets)
    with pytest.raises(ValueError):
        PredictedMaps(
            center_prob=np.zeros((4, 4)),
            scale=np.zeros((4, 5, 1)),
            offset=np.zeros((4, 4, 2)),
            attribute=np.zeros((4, 4, 4)),
        )

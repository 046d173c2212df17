"""
Loss Service - forward evaluation of the training objectives.

Evaluates the center (penalty-reduced focal), scale, offset, density and
diversity losses of one image's predicted maps against its TargetMaps, and
their weighted joint sum. Forward values only: nothing here computes
gradients.
"""

from typing import List, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.back.exceptions import ShapeMismatchError
from app.back.services.attributes import normalize_rows, row_norms
from app.back.services.targets_service import ObjectPositives, TargetMaps

logger = logging.getLogger(__name__)

# Probabilities are clamped into [EPS, 1 - EPS] inside the log only
EPS = 1e-7


class PredictedMaps(BaseModel):
    """Network outputs for one image at feature resolution."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image_id: str = ""
    center_prob: np.ndarray = Field(..., description="(rows, cols) probabilities.")
    scale: np.ndarray = Field(..., description="(rows, cols, s) log-scale.")
    offset: np.ndarray = Field(..., description="(rows, cols, 2) offsets.")
    attribute: np.ndarray = Field(..., description="(rows, cols, m) embeddings.")

    @model_validator(mode="after")
    def _check_shapes(self) -> "PredictedMaps":
        rows_cols = self.center_prob.shape
        if len(rows_cols) != 2:
            raise ShapeMismatchError(f"center_prob must be 2-D, got {self.center_prob.shape}")
        for name in ("scale", "offset", "attribute"):
            grid = getattr(self, name)
            if grid.ndim != 3 or grid.shape[:2] != rows_cols:
                raise ShapeMismatchError(
                    f"{name} has shape {grid.shape}, expected {rows_cols} + (channels,)"
                )
        if self.offset.shape[2] != 2:
            raise ShapeMismatchError(f"offset needs 2 channels, got {self.offset.shape[2]}")
        if self.attribute.shape[2] < 2:
            raise ShapeMismatchError(f"attribute needs m >= 2, got {self.attribute.shape[2]}")
        return self

    @property
    def m(self) -> int:
        return int(self.attribute.shape[2])


class LossWeights(BaseModel):
    """Loss weights and focal/hinge hyper-parameters."""

    center: float = Field(0.01, ge=0, description="lambda_c")
    scale: float = Field(1.0, ge=0, description="lambda_s")
    offset: float = Field(0.03, ge=0, description="lambda_o")
    attribute: float = Field(0.01, ge=0, description="lambda_a")
    density: float = Field(5.0, ge=0, description="lambda_den")
    margin: float = Field(1.0, ge=0, description="Hinge margin Delta of the push term.")
    gamma: float = Field(2.0, ge=0, description="Focal exponent.")
    beta: float = Field(4.0, ge=0, description="Penalty-reduction exponent.")

    def attribute_total(self, density_loss: float, diversity_loss: float) -> float:
        return self.density * density_loss + diversity_loss

    def combine(
        self, center_loss: float, scale_loss: float, offset_loss: float, attribute_loss: float
    ) -> float:
        return (
            self.center * center_loss
            + self.scale * scale_loss
            + self.offset * offset_loss
            + self.attribute * attribute_loss
        )


class LossBreakdown(BaseModel):
    """Per-term values of the joint objective for one image."""

    image_id: str = ""
    total: float
    center: float
    scale: float
    offset: float
    attribute: float
    density: float
    diversity: float
    objects: int
    warnings: List[str] = Field(default_factory=list)


def smooth_l1(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """SmoothL1: 0.5 x^2 below unit magnitude, |x| - 0.5 above."""
    arr = np.asarray(x, dtype=np.float64)
    a = np.abs(arr)
    out = np.where(a < 1.0, 0.5 * arr * arr, a - 0.5)
    if out.ndim == 0:
        return float(out)
    return out


def _supervised(targets: TargetMaps) -> List[ObjectPositives]:
    return [obj for obj in targets.objects if obj.cells]


def _check_grid(name: str, pred_shape: tuple, target_shape: tuple) -> None:
    if tuple(pred_shape) != tuple(target_shape):
        raise ShapeMismatchError(
            f"{name}: prediction shape {tuple(pred_shape)} != target shape {tuple(target_shape)}"
        )


def center_loss(pred: PredictedMaps, targets: TargetMaps, weights: LossWeights = LossWeights()) -> float:
    """
    Penalty-reduced pixel-wise focal loss on the center map.

    Normalised by the number of supervised objects K. With K = 0 the loss is
    0 and a warning is logged.
    """
    _check_grid("center", pred.center_prob.shape, targets.center.shape)
    k = len(_supervised(targets))
    if k == 0:
        logger.warning(f"Image '{targets.image_id}' has no positives; center loss set to 0")
        return 0.0

    p = np.clip(pred.center_prob.astype(np.float64), 0.0, 1.0)
    pos = targets.center
    p_hat = np.where(pos, p, 1.0 - p)
    alpha = np.where(pos, 1.0, (1.0 - targets.gaussian_mask) ** weights.beta)
    focal = (1.0 - p_hat) ** weights.gamma
    log_p = np.log(np.clip(p_hat, EPS, 1.0 - EPS))
    loss = -float(np.sum(alpha * focal * log_p)) / k
    return loss + 0.0


def _per_object_mean(errors: np.ndarray, owner: np.ndarray) -> float:
    # errors/owner are the valid cells only; average within each object, then over objects
    if owner.size == 0:
        return 0.0
    sums = np.bincount(owner, weights=errors)
    counts = np.bincount(owner)
    present = counts > 0
    return float(np.mean(sums[present] / counts[present]))


def scale_loss(pred: PredictedMaps, targets: TargetMaps) -> float:
    """SmoothL1 scale regression over assigned cells, averaged per object."""
    _check_grid("scale", pred.scale.shape, targets.scale.shape)
    valid = targets.scale_valid
    diff = pred.scale[valid] - targets.scale[valid]
    errors = np.sum(smooth_l1(diff), axis=-1) if diff.size else np.zeros(0)
    return _per_object_mean(errors, targets.scale_owner[valid])


def offset_loss(pred: PredictedMaps, targets: TargetMaps) -> float:
    """SmoothL1 offset regression (both components summed) over positive cells."""
    _check_grid("offset", pred.offset.shape, targets.offset.shape)
    valid = targets.offset_valid
    diff = pred.offset[valid] - targets.offset[valid]
    errors = np.sum(smooth_l1(diff), axis=-1) if diff.size else np.zeros(0)
    return _per_object_mean(errors, targets.offset_owner[valid])


def _embeddings_at(pred: PredictedMaps, obj: ObjectPositives) -> np.ndarray:
    xs = [x for x, _ in obj.cells]
    ys = [y for _, y in obj.cells]
    return pred.attribute[ys, xs]


def _check_attribute(pred: PredictedMaps, targets: TargetMaps) -> None:
    _check_grid("attribute", pred.attribute.shape[:2], targets.center.shape)


def density_loss(pred: PredictedMaps, targets: TargetMaps) -> float:
    """Regresses the embedding norm at every positive onto the object's density."""
    _check_attribute(pred, targets)
    objects = _supervised(targets)
    if not objects:
        return 0.0
    total = 0.0
    for obj in objects:
        norms = row_norms(_embeddings_at(pred, obj))
        total += float(np.sum(smooth_l1(norms - obj.density)))
    return total / len(objects)


def diversity_loss(pred: PredictedMaps, targets: TargetMaps, margin: float = 1.0) -> float:
    """
    Push/pull loss on normalised embeddings.

    The push term hinges the L1 distance between every ordered pair of
    per-object mean embeddings at ``margin``; the pull term is the mean over
    objects of squared L2 distances from each positive to its object mean.

    Raises:
        DegenerateEmbeddingError: If a positive cell holds a zero embedding.
    """
    _check_attribute(pred, targets)
    objects = _supervised(targets)
    if not objects:
        return 0.0

    means = []
    pull = 0.0
    for obj in objects:
        unit = normalize_rows(_embeddings_at(pred, obj))
        mean = unit.mean(axis=0)
        pull += float(np.sum((unit - mean) ** 2))
        means.append(mean)
    pull /= len(objects)

    means = np.asarray(means)
    l1 = np.abs(means[:, None, :] - means[None, :, :]).sum(axis=-1)
    hinge = np.maximum(0.0, margin - l1)
    np.fill_diagonal(hinge, 0.0)
    push = float(hinge.sum())
    return push + pull


def attribute_loss(pred: PredictedMaps, targets: TargetMaps, weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of density and diversity losses."""
    return weights.attribute_total(
        density_loss(pred, targets), diversity_loss(pred, targets, weights.margin)
    )


def joint_loss(pred: PredictedMaps, targets: TargetMaps, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """
    Joint objective with its per-term breakdown.

    Returns:
        LossBreakdown: Total and every component.
    """
    warnings = []
    n_objects = len(_supervised(targets))
    if n_objects == 0:
        warnings.append("no supervised objects: center loss is 0")

    l_c = center_loss(pred, targets, weights)
    l_s = scale_loss(pred, targets)
    l_o = offset_loss(pred, targets)
    l_den = density_loss(pred, targets)
    l_div = diversity_loss(pred, targets, weights.margin)
    l_a = weights.attribute_total(l_den, l_div)
    total = weights.combine(l_c, l_s, l_o, l_a)

    logger.debug(
        f"Loss for '{targets.image_id}': total={total:.6f} center={l_c:.6f} "
        f"scale={l_s:.6f} offset={l_o:.6f} attribute={l_a:.6f}"
    )
    return LossBreakdown(
        image_id=targets.image_id,
        total=total,
        center=l_c,
        scale=l_s,
        offset=l_o,
        attribute=l_a,
        density=l_den,
        diversity=l_div,
        objects=n_objects,
        warnings=warnings,
    )

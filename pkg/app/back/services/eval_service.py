"""
Evaluation Service - detection matching and log-average miss rate.

Matching follows the usual pedestrian-benchmark protocol: detections, in
descending score order, claim the unmatched ground truth with the highest
IoU at or above the threshold; detections that only hit ignore regions are
neither true nor false positives. The curve sweeps the score threshold and
MR^-2 is the geometric mean of the miss rate sampled at log-spaced FPPI
reference points.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from app.back.services.geometry import boxes_to_array, iou_matrix
from app.back.services.nms_service import Detection
from app.back.services.targets_service import GroundTruthScene
from app.back.workers import starmap_ordered

logger = logging.getLogger(__name__)

# Labels assigned to detections by match()
TRUE_POSITIVE = 1
FALSE_POSITIVE = 0
IGNORED = -1

# Miss rates are floored here before taking logs
MISS_RATE_FLOOR = 1e-10


class EvalSubset(BaseModel):
    """Ground-truth filter; boxes outside it become ignore regions."""

    name: str = "all"
    height_min: float = Field(0.0, ge=0.0)
    height_max: float = Field(float("inf"), gt=0.0)
    visibility_min: float = Field(0.0, ge=0.0, le=1.0)
    visibility_max: float = Field(1.0, ge=0.0, le=1.0)

    def admits(self, height: float, visibility: Optional[float]) -> bool:
        if not self.height_min <= height < self.height_max:
            return False
        vis = 1.0 if visibility is None else visibility
        if self.visibility_max >= 1.0:
            return vis >= self.visibility_min
        return self.visibility_min <= vis < self.visibility_max


# CityPersons-style subsets by height and visibility
SUBSET_PRESETS: Dict[str, EvalSubset] = {
    "all": EvalSubset(name="all"),
    "reasonable": EvalSubset(name="reasonable", height_min=50, visibility_min=0.65),
    "heavy": EvalSubset(name="heavy", height_min=50, visibility_min=0.2, visibility_max=0.65),
    "partial": EvalSubset(name="partial", height_min=50, visibility_min=0.65, visibility_max=0.9),
    "bare": EvalSubset(name="bare", height_min=50, visibility_min=0.9),
}


class EvalSettings(BaseModel):
    """Matching threshold, FPPI sampling and subset."""

    iou_threshold: float = Field(0.5, gt=0.0, le=1.0)
    fppi_min: float = Field(1e-2, gt=0.0)
    fppi_max: float = Field(1.0, gt=0.0)
    fppi_samples: int = Field(9, ge=1)
    subset: EvalSubset = Field(default_factory=EvalSubset)

    @model_validator(mode="after")
    def _range(self) -> "EvalSettings":
        if self.fppi_min > self.fppi_max:
            raise ValueError("fppi_min must not exceed fppi_max")
        return self

    def reference_points(self) -> np.ndarray:
        return np.logspace(
            np.log10(self.fppi_min), np.log10(self.fppi_max), self.fppi_samples
        )


class ImageMatch(BaseModel):
    """Matching outcome for one image."""

    image_id: str = ""
    scores: List[float] = Field(default_factory=list, description="Score-descending.")
    labels: List[int] = Field(default_factory=list, description="TP=1, FP=0, ignored=-1.")
    gt_matched: List[bool] = Field(default_factory=list)
    n_gt: int = 0

    @property
    def true_positives(self) -> int:
        return sum(1 for label in self.labels if label == TRUE_POSITIVE)

    @property
    def false_positives(self) -> int:
        return sum(1 for label in self.labels if label == FALSE_POSITIVE)


class EvalCurve(BaseModel):
    """Miss rate against false positives per image, plus the MR^-2 summary."""

    points: List[Tuple[float, float]] = Field(default_factory=list)
    mr2: float = 1.0
    n_images: int = 0
    n_gt: int = 0


def match(
    dets: Sequence[Detection],
    scene: GroundTruthScene,
    iou_thresh: float = 0.5,
    subset: Optional[EvalSubset] = None,
) -> ImageMatch:
    """
    Labels detections of one image as true positive, false positive or ignored.

    Args:
        dets (Sequence[Detection]): Detections, any order.
        scene (GroundTruthScene): Annotations; ignore flags mark ignore regions.
        iou_thresh (float): Minimum IoU for a match. Default is 0.5.
        subset (EvalSubset, optional): Ground truth outside it is treated as ignore.

    Returns:
        ImageMatch: Labels aligned with the score-descending detection order.
    """
    n_boxes = len(scene.boxes)
    ignore = np.zeros(n_boxes, dtype=bool)
    for i, box in enumerate(scene.boxes):
        vis = scene.visibility[i] if scene.visibility is not None else None
        ignore[i] = scene.is_ignored(i) or (
            subset is not None and not subset.admits(box.height, vis)
        )

    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    scores = [float(dets[i].score) for i in order]
    matched = np.zeros(n_boxes, dtype=bool)
    labels: List[int] = []

    if n_boxes and dets:
        overlaps = iou_matrix(
            boxes_to_array(dets[i].box for i in order), boxes_to_array(scene.boxes)
        )
    else:
        overlaps = np.zeros((len(dets), n_boxes))

    for row in overlaps:
        candidates = np.where(~ignore & ~matched & (row >= iou_thresh))[0]
        if candidates.size:
            best = candidates[np.argmax(row[candidates])]
            matched[best] = True
            labels.append(TRUE_POSITIVE)
        elif np.any(ignore & (row >= iou_thresh)):
            labels.append(IGNORED)
        else:
            labels.append(FALSE_POSITIVE)

    return ImageMatch(
        image_id=scene.image_id,
        scores=scores,
        labels=labels,
        gt_matched=[bool(m) for i, m in enumerate(matched) if not ignore[i]],
        n_gt=int((~ignore).sum()),
    )


def mr_fppi_curve(results: Sequence[ImageMatch], settings: EvalSettings = EvalSettings()) -> EvalCurve:
    """
    Sweeps the score threshold over all images and summarises it as MR^-2.

    Every distinct score is one operating point (tied scores enter together).
    At each FPPI reference point the lowest miss rate reached at or below it
    is used; reference points left of the curve count as miss rate 1.
    """
    n_images = len(results)
    n_gt = sum(r.n_gt for r in results)
    if n_gt == 0:
        logger.warning("No ground truth to evaluate against; mr2 reported as 0")
        return EvalCurve(points=[], mr2=0.0, n_images=n_images, n_gt=0)

    scores, labels = [], []
    for r in results:
        for score, label in zip(r.scores, r.labels):
            if label != IGNORED:
                scores.append(score)
                labels.append(label)

    refs = settings.reference_points()
    if not scores or n_images == 0:
        return EvalCurve(points=[], mr2=1.0, n_images=n_images, n_gt=n_gt)

    scores_arr = np.asarray(scores, dtype=np.float64)
    labels_arr = np.asarray(labels, dtype=np.int64)
    order = np.argsort(-scores_arr, kind="stable")
    scores_arr, labels_arr = scores_arr[order], labels_arr[order]

    tp = np.cumsum(labels_arr == TRUE_POSITIVE)
    fp = np.cumsum(labels_arr == FALSE_POSITIVE)
    # Last index of every group of equal scores
    last = np.append(scores_arr[1:] != scores_arr[:-1], True)
    tp, fp = tp[last], fp[last]

    miss = 1.0 - tp / n_gt
    fppi = fp / n_images

    sampled = np.ones(refs.shape)
    for i, ref in enumerate(refs):
        idx = np.searchsorted(fppi, ref, side="right") - 1
        if idx >= 0:
            sampled[i] = miss[idx]
    mr2 = float(np.exp(np.mean(np.log(np.maximum(MISS_RATE_FLOOR, sampled)))))

    points = [(float(f), float(m)) for f, m in zip(fppi, miss)]
    return EvalCurve(points=points, mr2=mr2, n_images=n_images, n_gt=n_gt)


def evaluate(
    dets_by_image: Sequence[Sequence[Detection]],
    scenes: Sequence[GroundTruthScene],
    settings: EvalSettings = EvalSettings(),
) -> EvalCurve:
    """Matches every image (index-aligned lists) and builds the curve."""
    results = starmap_ordered(
        lambda dets, scene: match(dets, scene, settings.iou_threshold, settings.subset),
        list(zip(dets_by_image, scenes)),
    )
    curve = mr_fppi_curve(results, settings)
    logger.info(
        f"Evaluated {curve.n_images} images, {curve.n_gt} ground truths: mr2={curve.mr2:.6f}"
    )
    return curve


def curve_to_frame(curve: EvalCurve) -> pd.DataFrame:
    """Curve points as a DataFrame with columns fppi, miss_rate."""
    return pd.DataFrame(curve.points, columns=["fppi", "miss_rate"])


def curve_to_csv(curve: EvalCurve) -> str:
    """Curve points rendered as CSV text."""
    return curve_to_frame(curve).to_csv(index=False, float_format="%.10g", lineterminator="\n")

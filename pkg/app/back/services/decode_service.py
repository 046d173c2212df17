"""
Decode Service - turns predicted maps into scored boxes.

Each cell whose center probability reaches the score threshold becomes one
detection: the offset map moves the cell to the real center, the scale map
gives log-height (and log-width when a second channel is present) and the
attribute vector at the cell is carried along for attribute-aware NMS.
"""

from typing import List
import logging

import numpy as np

from app.back.services.geometry import BBox
from app.back.services.loss_service import PredictedMaps
from app.back.services.nms_service import Detection

logger = logging.getLogger(__name__)

# Pedestrian width / height when the width channel is not predicted
DEFAULT_ASPECT_RATIO = 0.41


def decode_detections(
    pred: PredictedMaps,
    r: int = 4,
    score_threshold: float = 0.1,
    aspect_ratio: float = DEFAULT_ASPECT_RATIO,
) -> List[Detection]:
    """
    Decodes every confident cell of a prediction into a Detection.

    Args:
        pred (PredictedMaps): Network outputs at feature resolution.
        r (int): Down-sampling rate between image and grid. Default is 4.
        score_threshold (float): Minimum center probability. Default is 0.1.
        aspect_ratio (float): Width / height used without a width channel.

    Returns:
        list[Detection]: Score-descending; ties keep row-major cell order.
    """
    if r < 1:
        raise ValueError(f"down-sampling rate must be >= 1, got {r}")
    ys, xs = np.nonzero(pred.center_prob >= score_threshold)
    scores = pred.center_prob[ys, xs].astype(np.float64)
    order = np.argsort(-scores, kind="stable")

    dets: List[Detection] = []
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        cx = (x + float(pred.offset[y, x, 0])) * r
        cy = (y + float(pred.offset[y, x, 1])) * r
        h = float(np.exp(pred.scale[y, x, 0]))
        w = float(np.exp(pred.scale[y, x, 1])) if pred.scale.shape[2] > 1 else aspect_ratio * h
        box = BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
        dets.append(
            Detection(box=box, score=float(scores[i]), embedding=tuple(pred.attribute[y, x].tolist()))
        )

    logger.debug(f"Decoded {len(dets)} detections from '{pred.image_id}'")
    return dets

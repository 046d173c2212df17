"""
Training Router - API endpoints for supervision targets and loss evaluation.
"""

from typing import List
from fastapi import APIRouter, HTTPException
import logging

from app.back.schemas import LossRequest, LossResponse, TargetMapsRecord, TargetsRequest
from app.back.services.pipeline_service import loss_records, targets_records

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api",
    tags=["training"],
)


@router.post("/targets", response_model=List[TargetMapsRecord])
async def build_targets(request: TargetsRequest) -> List[TargetMapsRecord]:
    """
    Build center, mask, scale, offset and density grids per annotated image.

    Raises:
        HTTPException: 422 for an unusable down-sampling rate or box.
    """
    try:
        return targets_records(request.annotations, request.r, request.predict_width)
    except ValueError as e:
        logger.warning(f"Targets request rejected: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))


@router.post("/loss", response_model=LossResponse)
async def evaluate_loss(request: LossRequest) -> LossResponse:
    """
    Evaluate the joint loss of predicted maps against their targets.

    Returns:
        LossResponse: Per-image breakdowns and the mean total.

    Raises:
        HTTPException: 422 for shape mismatches or unmatched image ids.
    """
    try:
        images = loss_records(request.predictions, request.targets, request.weights)
    except ValueError as e:
        logger.warning(f"Loss request rejected: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    mean_total = sum(b.total for b in images) / len(images) if images else 0.0
    return LossResponse(images=images, mean_total=mean_total)

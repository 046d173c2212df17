"""
Inference Router - API endpoints for decoding and non-maximum suppression.

Both endpoints accept the same records as the ``decode`` and ``nms``
subcommands and return detections records in request order.
"""

from typing import List
from fastapi import APIRouter, HTTPException
import logging

from app.back.schemas import DecodeRequest, DetectionRecord, NmsRequest
from app.back.services.pipeline_service import decode_records, nms_records

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api",
    tags=["inference"],
)


@router.post("/nms", response_model=List[DetectionRecord])
async def suppress(request: NmsRequest) -> List[DetectionRecord]:
    """
    Run one NMS variant on every image of the request.

    Args:
        request (NmsRequest): Variant, thresholds and detections records.

    Returns:
        list[DetectionRecord]: Kept detections per image, score-descending.

    Raises:
        HTTPException: 422 when a variant lacks embeddings or input is invalid.
    """
    try:
        return nms_records(request.records, request.variant, request.config)
    except ValueError as e:
        logger.warning(f"NMS request rejected: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))


@router.post("/decode", response_model=List[DetectionRecord])
async def decode(request: DecodeRequest) -> List[DetectionRecord]:
    """
    Decode predicted maps into detections.

    Raises:
        HTTPException: 422 when a grid has the wrong size.
    """
    try:
        return decode_records(
            request.predictions, request.r, request.score_threshold, request.aspect_ratio
        )
    except ValueError as e:
        logger.warning(f"Decode request rejected: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))

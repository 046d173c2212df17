"""
Synth Router - API endpoint for synthetic crowd generation.
"""

from fastapi import APIRouter, HTTPException
import logging

from app.back.schemas import SynthResponse
from app.back.services.pipeline_service import synth_records
from app.back.services.synth_service import SynthConfig

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api",
    tags=["synth"],
)

# Upper bound on images per request
MAX_IMAGES_PER_REQUEST = 200


@router.post("/synth", response_model=SynthResponse)
async def synthesize(cfg: SynthConfig) -> SynthResponse:
    """
    Generate seeded synthetic annotations and detections.

    Args:
        cfg (SynthConfig): Generator parameters; the seed fixes the output.

    Returns:
        SynthResponse: Annotations and detections records, image by image.

    Raises:
        HTTPException: 422 when more than MAX_IMAGES_PER_REQUEST images are requested.
    """
    if cfg.n_images > MAX_IMAGES_PER_REQUEST:
        raise HTTPException(
            status_code=422,
            detail=f"n_images must be <= {MAX_IMAGES_PER_REQUEST}",
        )
    annotations, detections = synth_records(cfg)
    return SynthResponse(annotations=annotations, detections=detections)

"""
Evaluation Router - API endpoints for MR^-2 evaluation and NMS benchmarks.
"""

from typing import List
from fastapi import APIRouter, HTTPException
import logging

from app.back.routers.synth import MAX_IMAGES_PER_REQUEST
from app.back.schemas import BenchRequest, BenchRow, EvalReport, EvalRequest
from app.back.services.bench_service import run_bench
from app.back.services.eval_service import EvalSettings
from app.back.services.pipeline_service import eval_records, resolve_subset

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api",
    tags=["evaluation"],
)


@router.post("/eval", response_model=EvalReport)
async def evaluate_detections(request: EvalRequest) -> EvalReport:
    """
    Evaluate detections against annotations.

    Args:
        request (EvalRequest): Records, IoU threshold and subset preset.

    Returns:
        EvalReport: MR^-2, counts and the (fppi, miss_rate) curve.

    Raises:
        HTTPException: 422 for unknown subsets or unmatched image ids.
    """
    try:
        settings = EvalSettings(
            iou_threshold=request.iou_threshold, subset=resolve_subset(request.subset)
        )
        curve = eval_records(request.detections, request.annotations, settings)
        return EvalReport.from_curve(curve, settings)
    except ValueError as e:
        logger.warning(f"Evaluation request rejected: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))


@router.post("/bench", response_model=List[BenchRow])
async def bench(request: BenchRequest) -> List[BenchRow]:
    """
    Compare NMS variants on synthetic crowds.

    Returns:
        list[BenchRow]: One row per (seed, variant).

    Raises:
        HTTPException: 422 when more than MAX_IMAGES_PER_REQUEST images per seed are requested.
    """
    if request.config.n_images > MAX_IMAGES_PER_REQUEST:
        raise HTTPException(
            status_code=422,
            detail=f"config.n_images must be <= {MAX_IMAGES_PER_REQUEST}",
        )
    try:
        settings = EvalSettings(
            iou_threshold=request.iou_threshold, subset=resolve_subset(request.subset)
        )
        table = run_bench(
            request.config,
            variants=[v.value for v in request.variants],
            nms_cfg=request.nms,
            settings=settings,
            n_seeds=request.n_seeds,
        )
        return [BenchRow(**row) for row in table.to_dict(orient="records")]
    except ValueError as e:
        logger.warning(f"Bench request rejected: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))

"""
Pipeline Service - record-level orchestration shared by the CLI and the HTTP gateway.

Each function takes wire records, runs one service per image on the worker
pool and returns wire records in input order.
"""

from typing import Dict, List, Sequence, Tuple
import logging

from app.back.exceptions import ImageMismatchError
from app.back.schemas import (
    AnnotationRecord,
    DetectionRecord,
    PredictedMapsRecord,
    TargetMapsRecord,
)
from app.back.services.decode_service import decode_detections
from app.back.services.eval_service import SUBSET_PRESETS, EvalCurve, EvalSettings, evaluate
from app.back.services.loss_service import LossBreakdown, LossWeights, joint_loss
from app.back.services.nms_service import NmsConfig, NmsVariant, run_nms
from app.back.services.synth_service import SynthConfig, generate_dataset
from app.back.services.targets_service import build_targets
from app.back.workers import map_ordered

logger = logging.getLogger(__name__)


def resolve_subset(name: str):
    """
    Looks up a subset preset by name.

    Raises:
        ValueError: For an unknown preset.
    """
    try:
        return SUBSET_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown subset '{name}', expected one of {sorted(SUBSET_PRESETS)}") from None


def _index_by_id(records: Sequence, kind: str) -> Dict[str, object]:
    index: Dict[str, object] = {}
    for record in records:
        if record.image_id in index:
            raise ImageMismatchError(f"duplicate image_id '{record.image_id}' in {kind}")
        index[record.image_id] = record
    return index


def nms_records(
    records: Sequence[DetectionRecord], variant: NmsVariant | str, cfg: NmsConfig = NmsConfig()
) -> List[DetectionRecord]:
    """Runs one NMS variant on every image's detections."""

    def one(record: DetectionRecord) -> DetectionRecord:
        kept = run_nms(variant, record.to_detections(), cfg)
        return DetectionRecord.from_detections(record.image_id, kept)

    out = map_ordered(one, records)
    logger.info(
        f"NMS ({NmsVariant(variant).value}) kept {sum(len(r.boxes) for r in out)}"
        f"/{sum(len(r.boxes) for r in records)} detections over {len(records)} images"
    )
    return out


def decode_records(
    predictions: Sequence[PredictedMapsRecord],
    r: int = 4,
    score_threshold: float = 0.1,
    aspect_ratio: float = 0.41,
) -> List[DetectionRecord]:
    """Decodes predicted maps into detections records."""

    def one(record: PredictedMapsRecord) -> DetectionRecord:
        dets = decode_detections(record.to_maps(), r, score_threshold, aspect_ratio)
        return DetectionRecord.from_detections(record.image_id, dets)

    return map_ordered(one, predictions)


def targets_records(
    annotations: Sequence[AnnotationRecord], r: int = 4, predict_width: bool = False
) -> List[TargetMapsRecord]:
    """Builds supervision grids for every annotated image."""

    def one(record: AnnotationRecord) -> TargetMapsRecord:
        return TargetMapsRecord.from_targets(build_targets(record.to_scene(), r, predict_width))

    out = map_ordered(one, annotations)
    logger.info(f"Built targets for {len(out)} images at r={r}")
    return out


def loss_records(
    predictions: Sequence[PredictedMapsRecord],
    targets: Sequence[TargetMapsRecord],
    weights: LossWeights = LossWeights(),
) -> List[LossBreakdown]:
    """
    Evaluates the joint loss per image, joining predictions to targets by image id.

    Raises:
        ImageMismatchError: If a prediction has no targets or ids repeat.
    """
    by_id = _index_by_id(targets, "targets")
    _index_by_id(predictions, "predictions")
    pairs: List[Tuple[PredictedMapsRecord, TargetMapsRecord]] = []
    for record in predictions:
        if record.image_id not in by_id:
            raise ImageMismatchError(f"no targets for predicted image '{record.image_id}'")
        pairs.append((record, by_id[record.image_id]))

    return map_ordered(lambda pair: joint_loss(pair[0].to_maps(), pair[1].to_targets(), weights), pairs)


def eval_records(
    detections: Sequence[DetectionRecord],
    annotations: Sequence[AnnotationRecord],
    settings: EvalSettings = EvalSettings(),
) -> EvalCurve:
    """
    Evaluates detections against annotations, joined by image id.

    Annotated images without a detections record count as images with no
    detections.

    Raises:
        ImageMismatchError: For detections of an image that is not annotated.
    """
    ann_by_id = _index_by_id(annotations, "annotations")
    det_by_id = _index_by_id(detections, "detections")
    unknown = [image_id for image_id in det_by_id if image_id not in ann_by_id]
    if unknown:
        raise ImageMismatchError(f"detections for unannotated images: {unknown[:5]}")

    scenes = [record.to_scene() for record in annotations]
    dets = [
        det_by_id[record.image_id].to_detections() if record.image_id in det_by_id else []
        for record in annotations
    ]
    return evaluate(dets, scenes, settings)


def synth_records(cfg: SynthConfig) -> Tuple[List[AnnotationRecord], List[DetectionRecord]]:
    """Synthetic annotations and detections records for every image of ``cfg``."""
    scenes, dets = generate_dataset(cfg)
    annotations = [AnnotationRecord.from_scene(scene) for scene in scenes]
    detections = [
        DetectionRecord.from_detections(scene.image_id, image_dets)
        for scene, image_dets in zip(scenes, dets)
    ]
    return annotations, detections

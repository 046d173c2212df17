"""
Pydantic data models for the wire formats.

These schemas describe the JSON-lines records read and written by the
command line and the request/response bodies of the HTTP gateway. Each
record converts to and from the domain types used by the services.
Grids travel flattened in row-major ``[y, x, channel]`` order.
"""

from typing import Annotated, List, Optional, Tuple

import numpy as np
from pydantic import AfterValidator, BaseModel, Field, FiniteFloat, model_validator

from app.back.exceptions import ShapeMismatchError
from app.back.services.eval_service import EvalCurve, EvalSettings
from app.back.services.geometry import BBox
from app.back.services.loss_service import LossBreakdown, LossWeights, PredictedMaps
from app.back.services.nms_service import Detection, NmsConfig, NmsVariant
from app.back.services.synth_service import SynthConfig
from app.back.services.targets_service import GroundTruthScene, ObjectPositives, TargetMaps


def _check_box(value: List[float]) -> List[float]:
    BBox(*value)
    return value


BoxCoords = Annotated[List[FiniteFloat], Field(min_length=4, max_length=4), AfterValidator(_check_box)]


class DetectionBoxRecord(BaseModel):
    """One scored box inside a detections record."""

    box: BoxCoords = Field(..., description="Corner form [x1, y1, x2, y2] in pixels.")
    score: FiniteFloat = Field(..., description="Detector confidence.")
    embedding: Optional[List[FiniteFloat]] = Field(
        None, description="Attribute embedding of length m, when predicted."
    )


class DetectionRecord(BaseModel):
    """Detections of one image, one JSON object per line."""

    image_id: str = Field(..., description="Image identifier.")
    boxes: List[DetectionBoxRecord] = Field(default_factory=list, description="Detections.")

    def to_detections(self) -> List[Detection]:
        return [
            Detection(box=BBox(*b.box), score=b.score, embedding=b.embedding) for b in self.boxes
        ]

    @classmethod
    def from_detections(cls, image_id: str, dets: List[Detection]) -> "DetectionRecord":
        return cls(
            image_id=image_id,
            boxes=[
                DetectionBoxRecord(
                    box=d.box.as_list(),
                    score=d.score,
                    embedding=list(d.embedding) if d.embedding is not None else None,
                )
                for d in dets
            ],
        )


class AnnotationBoxRecord(BaseModel):
    """One annotated box inside an annotations record."""

    box: BoxCoords = Field(..., description="Corner form [x1, y1, x2, y2] in pixels.")
    ignore: bool = Field(False, description="Ignore region: matches are neither rewarded nor penalised.")
    visibility: Optional[float] = Field(
        None, ge=0.0, le=1.0, description="Visible fraction of the person."
    )


class AnnotationRecord(BaseModel):
    """Ground truth of one image, one JSON object per line."""

    image_id: str = Field(..., description="Image identifier.")
    width: int = Field(..., gt=0, description="Image width in pixels.")
    height: int = Field(..., gt=0, description="Image height in pixels.")
    boxes: List[AnnotationBoxRecord] = Field(default_factory=list, description="Annotations.")

    @model_validator(mode="after")
    def _inside_image(self) -> "AnnotationRecord":
        for i, b in enumerate(self.boxes):
            if not BBox(*b.box).inside(self.width, self.height):
                raise ValueError(f"boxes.{i}.box {b.box} lies outside the {self.width}x{self.height} image")
        return self

    def to_scene(self) -> GroundTruthScene:
        return GroundTruthScene(
            image_id=self.image_id,
            image_width=self.width,
            image_height=self.height,
            boxes=[BBox(*b.box) for b in self.boxes],
            ignore=[b.ignore for b in self.boxes],
            visibility=[b.visibility for b in self.boxes],
        )

    @classmethod
    def from_scene(cls, scene: GroundTruthScene) -> "AnnotationRecord":
        return cls(
            image_id=scene.image_id,
            width=scene.image_width,
            height=scene.image_height,
            boxes=[
                AnnotationBoxRecord(
                    box=box.as_list(),
                    ignore=scene.is_ignored(i),
                    visibility=scene.visibility[i] if scene.visibility is not None else None,
                )
                for i, box in enumerate(scene.boxes)
            ],
        )


def _grid(values: List[float], shape: Tuple[int, ...], name: str, dtype=np.float64) -> np.ndarray:
    expected = int(np.prod(shape))
    if len(values) != expected:
        raise ShapeMismatchError(f"{name} has {len(values)} values, expected {expected} for shape {shape}")
    return np.asarray(values, dtype=dtype).reshape(shape)


class ObjectRecord(BaseModel):
    """Positive cells of one supervised object."""

    index: int = Field(..., description="Index of the box in the annotation record.")
    center: Tuple[float, float] = Field(..., description="Real center at feature scale (x, y).")
    cells: List[Tuple[int, int]] = Field(..., description="Positive (x, y) cells.")
    density: float = Field(..., description="Max IoU with any other annotated box.")


class TargetMapsRecord(BaseModel):
    """Supervision grids of one image; owners are box indices, -1 where unassigned."""

    image_id: str
    r: int = Field(..., ge=1, description="Down-sampling rate.")
    grid_width: int = Field(..., ge=1)
    grid_height: int = Field(..., ge=1)
    scale_channels: int = Field(1, ge=1, le=2, description="1 = log-height, 2 = plus log-width.")
    center: List[int] = Field(..., description="Positive cells (0/1).")
    gaussian_mask: List[float]
    scale: List[float]
    scale_owner: List[int]
    offset: List[float]
    offset_owner: List[int]
    density: List[float]
    density_owner: List[int]
    objects: List[ObjectRecord] = Field(default_factory=list)

    @classmethod
    def from_targets(cls, maps: TargetMaps) -> "TargetMapsRecord":
        return cls(
            image_id=maps.image_id,
            r=maps.r,
            grid_width=maps.grid_width,
            grid_height=maps.grid_height,
            scale_channels=maps.scale_channels,
            center=maps.center.astype(int).ravel().tolist(),
            gaussian_mask=maps.gaussian_mask.ravel().tolist(),
            scale=maps.scale.ravel().tolist(),
            scale_owner=maps.scale_owner.ravel().tolist(),
            offset=maps.offset.ravel().tolist(),
            offset_owner=maps.offset_owner.ravel().tolist(),
            density=maps.density.ravel().tolist(),
            density_owner=maps.density_owner.ravel().tolist(),
            objects=[ObjectRecord(**obj.model_dump()) for obj in maps.objects],
        )

    def to_targets(self) -> TargetMaps:
        """
        Rebuilds the grids.

        Raises:
            ShapeMismatchError: If a flattened grid has the wrong length.
        """
        rc = (self.grid_height, self.grid_width)
        return TargetMaps(
            image_id=self.image_id,
            r=self.r,
            grid_width=self.grid_width,
            grid_height=self.grid_height,
            center=_grid(self.center, rc, "center", dtype=np.int64).astype(bool),
            gaussian_mask=_grid(self.gaussian_mask, rc, "gaussian_mask"),
            scale=_grid(self.scale, rc + (self.scale_channels,), "scale"),
            scale_owner=_grid(self.scale_owner, rc, "scale_owner", dtype=np.int64),
            offset=_grid(self.offset, rc + (2,), "offset"),
            offset_owner=_grid(self.offset_owner, rc, "offset_owner", dtype=np.int64),
            density=_grid(self.density, rc, "density"),
            density_owner=_grid(self.density_owner, rc, "density_owner", dtype=np.int64),
            objects=[ObjectPositives(**obj.model_dump()) for obj in self.objects],
        )


class PredictedMapsRecord(BaseModel):
    """Network outputs of one image at feature resolution."""

    image_id: str
    grid_width: int = Field(..., ge=1)
    grid_height: int = Field(..., ge=1)
    scale_channels: int = Field(1, ge=1, le=2)
    m: int = Field(..., ge=2, description="Attribute embedding length.")
    center_prob: List[float]
    scale: List[float]
    offset: List[float]
    attribute: List[float]

    def to_maps(self) -> PredictedMaps:
        rc = (self.grid_height, self.grid_width)
        return PredictedMaps(
            image_id=self.image_id,
            center_prob=_grid(self.center_prob, rc, "center_prob"),
            scale=_grid(self.scale, rc + (self.scale_channels,), "scale"),
            offset=_grid(self.offset, rc + (2,), "offset"),
            attribute=_grid(self.attribute, rc + (self.m,), "attribute"),
        )

    @classmethod
    def from_maps(cls, maps: PredictedMaps) -> "PredictedMapsRecord":
        rows, cols = maps.center_prob.shape
        return cls(
            image_id=maps.image_id,
            grid_width=cols,
            grid_height=rows,
            scale_channels=int(maps.scale.shape[2]),
            m=maps.m,
            center_prob=maps.center_prob.ravel().tolist(),
            scale=maps.scale.ravel().tolist(),
            offset=maps.offset.ravel().tolist(),
            attribute=maps.attribute.ravel().tolist(),
        )


class EvalReport(BaseModel):
    """Evaluation summary written by the ``eval`` pipeline."""

    mr2: float = Field(..., description="Log-average miss rate over FPPI in the sampled range.")
    n_images: int
    n_gt: int = Field(..., description="Ground truths counted (not ignored, inside the subset).")
    iou_threshold: float
    subset: str
    points: List[Tuple[float, float]] = Field(
        default_factory=list, description="(fppi, miss_rate) operating points."
    )

    @classmethod
    def from_curve(cls, curve: EvalCurve, settings: EvalSettings, with_points: bool = True) -> "EvalReport":
        return cls(
            mr2=curve.mr2,
            n_images=curve.n_images,
            n_gt=curve.n_gt,
            iou_threshold=settings.iou_threshold,
            subset=settings.subset.name,
            points=curve.points if with_points else [],
        )


# HTTP request / response bodies


class NmsRequest(BaseModel):
    variant: NmsVariant = Field(NmsVariant.ATTRIBUTE, description="Suppression rule.")
    config: NmsConfig = Field(default_factory=NmsConfig)
    records: List[DetectionRecord] = Field(..., description="Detections, one record per image.")


class DecodeRequest(BaseModel):
    r: int = Field(4, ge=1)
    score_threshold: float = Field(0.1, ge=0.0, le=1.0)
    aspect_ratio: float = Field(0.41, gt=0.0)
    predictions: List[PredictedMapsRecord]


class EvalRequest(BaseModel):
    iou_threshold: float = Field(0.5, gt=0.0, le=1.0)
    subset: str = Field("all", description="Subset preset name.")
    detections: List[DetectionRecord]
    annotations: List[AnnotationRecord]


class TargetsRequest(BaseModel):
    r: int = Field(4, ge=1)
    predict_width: bool = False
    annotations: List[AnnotationRecord]


class LossRequest(BaseModel):
    weights: LossWeights = Field(default_factory=LossWeights)
    predictions: List[PredictedMapsRecord]
    targets: List[TargetMapsRecord]


class LossResponse(BaseModel):
    images: List[LossBreakdown]
    mean_total: float


class SynthResponse(BaseModel):
    annotations: List[AnnotationRecord]
    detections: List[DetectionRecord]


class BenchRequest(BaseModel):
    config: SynthConfig = Field(default_factory=SynthConfig.crowded)
    nms: NmsConfig = Field(default_factory=NmsConfig)
    variants: List[NmsVariant] = Field(default_factory=lambda: list(NmsVariant))
    n_seeds: int = Field(1, ge=1, le=100)
    iou_threshold: float = Field(0.5, gt=0.0, le=1.0)
    subset: str = "all"


class BenchRow(BaseModel):
    seed: int
    variant: str
    mr2: float
    kept: int
    true_positives: int
    false_positives: int

"""
Synth Service - seeded synthetic crowd scenes and detector outputs.

Every random draw comes from a generator keyed by
``(seed, image_index, stream, entity)``, so any image (and any object inside
it) can be regenerated on its own and in any order. Scenes place people in
disjoint horizontal slots; a slot holds either one person or a crowd pair,
two equal boxes displaced sideways to hit an exact target IoU.
"""

from typing import List, Literal, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from app.back.services.attributes import compose
from app.back.services.geometry import BBox, boxes_to_array, from_xywh, iou_matrix, iou_one_to_many
from app.back.services.nms_service import Detection
from app.back.services.targets_service import GroundTruthScene, density_values
from app.back.workers import map_ordered

logger = logging.getLogger(__name__)

# Generator streams
SCENE_STREAM = 0
DETECTION_STREAM = 1
BACKGROUND_STREAM = 2

# Background false positives must stay below this IoU with every person
BACKGROUND_MAX_IOU = 0.3
BACKGROUND_ATTEMPTS = 50

# Keeps rounding from pushing boxes past the image border
EDGE_MARGIN = 1e-6

Range = Tuple[float, float]


class SynthConfig(BaseModel):
    """Parameters of the scene and detection generator."""

    seed: int = Field(0, ge=0)
    n_images: int = Field(10, ge=0)
    image_width: int = Field(1280, gt=0)
    image_height: int = Field(640, gt=0)
    people_per_image: Tuple[int, int] = Field((4, 8), description="Inclusive range.")
    crowd_pairs: float = Field(0.5, ge=0.0, le=1.0, description="Fraction of people placed in pairs.")
    pair_iou_range: Range = Field((0.4, 0.7), description="IoU drawn for each crowd pair.")
    height_range: Range = Field((80.0, 180.0))
    aspect_ratio: float = Field(0.41, gt=0.0, description="Width / height of every person.")
    box_jitter_sigma: float = Field(1.0, ge=0.0, description="Pixels, per coordinate.")
    tp_score_range: Range = Field((0.6, 1.0))
    fp_rate: float = Field(1.0, ge=0.0, description="Mean background false positives per image.")
    fp_score_range: Range = Field((0.05, 0.6))
    duplicates_per_gt: Tuple[int, int] = Field((0, 2), description="Inclusive range.")
    duplicate_shift: Range = Field((0.05, 0.3), description="Fraction of box width.")
    duplicate_score_decay: Range = Field((0.7, 0.95))
    embedding_mode: Literal["oracle", "noisy", "constant"] = "oracle"
    embedding_dim: int = Field(4, ge=2)
    embedding_min_norm: float = Field(0.01, gt=0.0)
    noise_angle_sigma: float = Field(0.1, ge=0.0)
    noise_norm_sigma: float = Field(0.05, ge=0.0)
    constant_density: float = Field(0.5, ge=0.0)

    @field_validator(
        "people_per_image",
        "pair_iou_range",
        "height_range",
        "tp_score_range",
        "fp_score_range",
        "duplicates_per_gt",
        "duplicate_shift",
        "duplicate_score_decay",
    )
    @classmethod
    def _ordered(cls, value, info):
        lo, hi = value
        if lo > hi:
            raise ValueError(f"{info.field_name}: lower bound {lo} exceeds upper bound {hi}")
        if lo < 0:
            raise ValueError(f"{info.field_name}: bounds must be non-negative")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthConfig":
        lo, hi = self.pair_iou_range
        if lo <= 0.0 or hi >= 1.0:
            raise ValueError("pair_iou_range must lie inside (0, 1)")
        if self.height_range[0] <= 0:
            raise ValueError("height_range must be positive")
        if self.height_range[1] >= self.image_height:
            raise ValueError("height_range exceeds image height")
        return self

    @classmethod
    def crowded(cls, **overrides) -> "SynthConfig":
        """Preset with most people in heavily overlapping pairs."""
        params = {"crowd_pairs": 0.8, "pair_iou_range": (0.45, 0.7)}
        params.update(overrides)
        return cls(**params)


def keyed_rng(seed: int, image_index: int, stream: int, entity: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, image, stream, entity) key."""
    key = np.random.SeedSequence([seed, image_index, stream, entity])
    return np.random.Generator(np.random.Philox(key))


def pair_displacement(width: float, target_iou: float) -> float:
    """Horizontal shift giving two equal boxes of ``width`` the IoU ``target_iou``."""
    if not 0.0 < target_iou <= 1.0:
        raise ValueError(f"target IoU must be in (0, 1], got {target_iou}")
    return width * (1.0 - target_iou) / (1.0 + target_iou)


def place_pair(x: float, y: float, width: float, height: float, target_iou: float) -> Tuple[BBox, BBox]:
    """Two equal boxes side by side, the second shifted right to reach ``target_iou``."""
    dx = pair_displacement(width, target_iou)
    front = from_xywh(x, y, width, height)
    return front, front.shift(dx, 0.0)


def generate_scene(cfg: SynthConfig, image_index: int) -> GroundTruthScene:
    """
    Deterministic scene for one image index.

    Args:
        cfg (SynthConfig): Generator parameters.
        image_index (int): Index of the image within the run.

    Returns:
        GroundTruthScene: People ordered slot by slot; pair members are adjacent,
        front member first.
    """
    rng = keyed_rng(cfg.seed, image_index, SCENE_STREAM)
    n_people = int(rng.integers(cfg.people_per_image[0], cfg.people_per_image[1] + 1))
    n_pairs = min(int(round(cfg.crowd_pairs * n_people / 2.0)), n_people // 2)
    n_units = n_people - n_pairs
    kinds = np.array([True] * n_pairs + [False] * (n_units - n_pairs))
    rng.shuffle(kinds)

    boxes: List[BBox] = []
    visibility: List[float] = []
    if n_units:
        slot = cfg.image_width / n_units
        max_height = min(cfg.height_range[1], slot / (2.0 * cfg.aspect_ratio))
        min_height = min(cfg.height_range[0], max_height)
        for unit, is_pair in enumerate(kinds):
            h = float(rng.uniform(min_height, max_height))
            w = cfg.aspect_ratio * h
            y = float(rng.uniform(0.0, cfg.image_height - h - EDGE_MARGIN))
            x0 = unit * slot
            room = min(x0 + slot, cfg.image_width) - x0 - EDGE_MARGIN
            if is_pair:
                t = float(rng.uniform(*cfg.pair_iou_range))
                span = w + pair_displacement(w, t)
                x = x0 + float(rng.uniform(0.0, max(room - span, 0.0)))
                front, rear = place_pair(x, y, w, h, t)
                overlap = front.x2 - rear.x1
                boxes.extend([front, rear])
                visibility.extend([1.0, 1.0 - overlap / w])
            else:
                x = x0 + float(rng.uniform(0.0, max(room - w, 0.0)))
                boxes.append(from_xywh(x, y, w, h))
                visibility.append(1.0)

    return GroundTruthScene(
        image_id=f"synth-{cfg.seed}-{image_index:05d}",
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        boxes=boxes,
        ignore=[False] * len(boxes),
        visibility=visibility,
    )


def _axis_direction(k: int, m: int) -> np.ndarray:
    # Cycles e1, -e1, e2, -e2, ...: distinct neighbours are at least 90 degrees apart
    direction = np.zeros(m)
    direction[(k // 2) % m] = 1.0 if k % 2 == 0 else -1.0
    return direction


def _embedding(cfg: SynthConfig, k: int, density: float, rng: np.random.Generator) -> Tuple[float, ...]:
    m = cfg.embedding_dim
    if cfg.embedding_mode == "constant":
        vec = np.zeros(m)
        vec[0] = cfg.constant_density
        return tuple(float(v) for v in vec)

    direction = _axis_direction(k, m)
    norm = max(density, cfg.embedding_min_norm)
    if cfg.embedding_mode == "noisy":
        direction = direction + rng.normal(0.0, cfg.noise_angle_sigma, size=m)
        norm = max(norm + float(rng.normal(0.0, cfg.noise_norm_sigma)), cfg.embedding_min_norm)
    return tuple(float(v) for v in compose(direction, norm))


def _jitter(box: BBox, sigma: float, rng: np.random.Generator) -> BBox:
    if sigma == 0.0:
        return box
    d = rng.normal(0.0, sigma, size=4)
    x1, y1, x2, y2 = box.x1 + d[0], box.y1 + d[1], box.x2 + d[2], box.y2 + d[3]
    return BBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))


def _background(cfg: SynthConfig, scene: GroundTruthScene, image_index: int) -> List[Detection]:
    rng = keyed_rng(cfg.seed, image_index, BACKGROUND_STREAM)
    count = int(rng.poisson(cfg.fp_rate)) if cfg.fp_rate > 0 else 0
    gts = boxes_to_array(scene.boxes)
    out: List[Detection] = []
    for _ in range(count):
        for _attempt in range(BACKGROUND_ATTEMPTS):
            h = float(rng.uniform(*cfg.height_range))
            w = cfg.aspect_ratio * h
            x = float(rng.uniform(0.0, cfg.image_width - w))
            y = float(rng.uniform(0.0, cfg.image_height - h))
            box = from_xywh(x, y, w, h)
            if len(gts) and np.any(iou_one_to_many(np.asarray(box.as_list()), gts) >= BACKGROUND_MAX_IOU):
                continue
            score = float(rng.uniform(*cfg.fp_score_range))
            if cfg.embedding_mode == "constant":
                embedding = _embedding(cfg, 0, 0.0, rng)
            else:
                direction = rng.normal(size=cfg.embedding_dim)
                norm = float(rng.uniform(cfg.embedding_min_norm, 0.3))
                embedding = tuple(float(v) for v in compose(direction, norm))
            out.append(Detection(box=box, score=score, embedding=embedding))
            break
    return out


def generate_detections(
    scene: GroundTruthScene, cfg: SynthConfig, image_index: Optional[int] = None
) -> List[Detection]:
    """
    Simulated detector output for a scene.

    Each person yields one jittered primary detection plus ``duplicates_per_gt``
    shifted duplicates with decayed scores; every detection of a person shares
    that person's embedding direction. Background false positives follow.

    Args:
        scene (GroundTruthScene): Scene from :func:`generate_scene`.
        cfg (SynthConfig): Generator parameters.
        image_index (int, optional): Key for the generators; parsed from the
            synthetic image id when omitted.

    Returns:
        list[Detection]: Per-person detections in scene order, then background.
    """
    if image_index is None:
        image_index = _index_from_id(scene.image_id)
    densities = density_values(scene)
    dets: List[Detection] = []
    for k, box in enumerate(scene.boxes):
        if scene.is_ignored(k):
            continue
        rng = keyed_rng(cfg.seed, image_index, DETECTION_STREAM, k)
        embedding = _embedding(cfg, k, float(densities[k]), rng)
        score = float(rng.uniform(*cfg.tp_score_range))
        dets.append(Detection(box=_jitter(box, cfg.box_jitter_sigma, rng), score=score, embedding=embedding))

        n_dup = int(rng.integers(cfg.duplicates_per_gt[0], cfg.duplicates_per_gt[1] + 1))
        for _ in range(n_dup):
            shift = float(rng.uniform(*cfg.duplicate_shift)) * box.width
            sign = 1.0 if rng.random() < 0.5 else -1.0
            dup_box = _jitter(box.shift(sign * shift, 0.0), cfg.box_jitter_sigma, rng)
            dup_score = score * float(rng.uniform(*cfg.duplicate_score_decay))
            dets.append(Detection(box=dup_box, score=dup_score, embedding=embedding))

    dets.extend(_background(cfg, scene, image_index))
    return dets


def _index_from_id(image_id: str) -> int:
    try:
        return int(image_id.rsplit("-", 1)[-1])
    except ValueError:
        return 0


def generate_dataset(cfg: SynthConfig) -> Tuple[List[GroundTruthScene], List[List[Detection]]]:
    """Scenes and detections for every image of ``cfg``, in image order."""
    def one(index: int) -> Tuple[GroundTruthScene, List[Detection]]:
        scene = generate_scene(cfg, index)
        return scene, generate_detections(scene, cfg, index)

    pairs = map_ordered(one, range(cfg.n_images))
    scenes = [scene for scene, _ in pairs]
    dets = [d for _, d in pairs]
    logger.info(
        f"Generated {len(scenes)} synthetic images (seed={cfg.seed}): "
        f"{sum(len(s.boxes) for s in scenes)} people, {sum(len(d) for d in dets)} detections"
    )
    return scenes, dets


def crowd_fixture() -> Tuple[GroundTruthScene, List[Detection]]:
    """
    Three pedestrians, two of them overlapping, and four detections.

    A and B are two people at IoU 0.6 with orthogonal embeddings, C stands
    alone, and D is a lower-scored duplicate of A sharing its embedding.
    Greedy NMS keeps A and C (B is missed), density-aware NMS keeps all four
    (D is a false positive) and attribute-aware NMS keeps A, B and C.
    """
    a = BBox(100, 0, 140, 100)
    b = BBox(110, 0, 150, 100)
    c = BBox(300, 0, 340, 100)
    d = BBox(92, 0, 132, 100)
    scene = GroundTruthScene(
        image_id="crowd-fixture",
        image_width=400,
        image_height=120,
        boxes=[a, b, c],
        ignore=[False, False, False],
        visibility=[1.0, 0.25, 1.0],
    )
    dets = [
        Detection(box=a, score=0.95, embedding=(0.7, 0.0, 0.0, 0.0)),
        Detection(box=b, score=0.9, embedding=(0.0, 0.7, 0.0, 0.0)),
        Detection(box=c, score=0.85, embedding=(0.0, 0.0, 0.01, 0.0)),
        Detection(box=d, score=0.8, embedding=(0.7, 0.0, 0.0, 0.0)),
    ]
    return scene, dets


def scene_pair_ious(scene: GroundTruthScene) -> Sequence[float]:
    """Upper-triangle pairwise IoUs of a scene's boxes."""
    arr = boxes_to_array(scene.boxes)
    if len(arr) < 2:
        return []
    mat = iou_matrix(arr, arr)
    rows, cols = np.triu_indices(len(arr), k=1)
    return [float(v) for v in mat[rows, cols]]

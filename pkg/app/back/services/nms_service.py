"""
NMS Service - greedy, density-aware, diversity-aware and attribute-aware suppression.

All four variants share one hard-suppression loop: pick the highest-scoring
remaining box M, keep it, and drop every remaining box b whose IoU with M
reaches the pair's threshold. Only the threshold rule differs:

    greedy     N_t
    density    max(N_t, d_M)
    diversity  N_high if dist(M, b) > delta_t else N_low
    attribute  max(d_M, N_t) if dist(M, b) > delta_t else N_t

where d_M is the norm of M's embedding clamped to [0, 1] and dist is the L2
distance between normalised embeddings. A zero embedding has no direction,
so a pair where either side is zero counts as the same identity and takes
the lower branch. Scores are sorted stably, so ties keep input order.
"""

from enum import Enum
from typing import Callable, List, Optional, Sequence
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, InstanceOf, field_validator, model_validator

from app.back.exceptions import NmsConfigurationError
from app.back.services.attributes import NORM_EPS, dist_one_to_many, row_norms
from app.back.services.geometry import BBox, boxes_to_array, iou_one_to_many

logger = logging.getLogger(__name__)


class Detection(BaseModel):
    """A scored box with an optional attribute embedding."""

    model_config = ConfigDict(frozen=True)

    box: InstanceOf[BBox]
    score: float
    embedding: Optional[tuple[float, ...]] = None

    @field_validator("score")
    @classmethod
    def _finite_score(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError(f"score must be finite, got {value}")
        return value

    @field_validator("embedding", mode="before")
    @classmethod
    def _as_tuple(cls, value):
        if value is None:
            return None
        return tuple(float(v) for v in value)


class NmsVariant(str, Enum):
    GREEDY = "greedy"
    DENSITY = "density"
    DIVERSITY = "diversity"
    ATTRIBUTE = "attribute"


class NmsConfig(BaseModel):
    """Thresholds shared by the NMS family."""

    nt: float = Field(0.5, ge=0.0, le=1.0, description="Base IoU threshold N_t.")
    n_high: float = Field(0.6, ge=0.0, le=1.0, description="Diversity-aware high threshold.")
    n_low: float = Field(0.5, ge=0.0, le=1.0, description="Diversity-aware low threshold.")
    delta_t: float = Field(0.9, ge=0.0, le=2.0, description="Embedding distance threshold.")
    score_floor: float = Field(0.01, ge=0.0, description="Detections below this score are dropped.")
    max_keep: Optional[int] = Field(None, ge=1, description="Cap on kept detections.")

    @model_validator(mode="after")
    def _ordered_thresholds(self) -> "NmsConfig":
        if self.n_low > self.n_high:
            raise ValueError(f"n_low ({self.n_low}) must not exceed n_high ({self.n_high})")
        return self


# (m_index, candidate_indices, candidate_ious) -> per-candidate thresholds
ThresholdRule = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def _embedding_matrix(dets: Sequence[Detection], variant: str) -> np.ndarray:
    if any(d.embedding is None for d in dets):
        raise NmsConfigurationError(f"{variant} NMS requires an embedding on every detection")
    dims = {len(d.embedding) for d in dets}
    if len(dims) > 1:
        raise NmsConfigurationError(f"inconsistent embedding lengths: {sorted(dims)}")
    return np.asarray([d.embedding for d in dets], dtype=np.float64).reshape(len(dets), -1)


def _different_identity(
    embeddings: np.ndarray, norms: np.ndarray, m: int, candidates: np.ndarray, delta_t: float
) -> np.ndarray:
    """True where dist(M, b) > delta_t; zero-norm pairs are never different."""
    different = np.zeros(candidates.shape, dtype=bool)
    if norms[m] <= NORM_EPS:
        return different
    directed = norms[candidates] > NORM_EPS
    if np.any(directed):
        d = dist_one_to_many(embeddings[m], embeddings[candidates[directed]])
        different[directed] = d > delta_t
    return different


def _suppress(dets: Sequence[Detection], cfg: NmsConfig, rule: ThresholdRule) -> List[Detection]:
    if not dets:
        return []
    scores = np.asarray([d.score for d in dets], dtype=np.float64)
    boxes = boxes_to_array(d.box for d in dets)

    order = np.argsort(-scores, kind="stable")
    order = order[scores[order] >= cfg.score_floor]

    kept: List[int] = []
    while order.size:
        m = int(order[0])
        kept.append(m)
        if cfg.max_keep is not None and len(kept) >= cfg.max_keep:
            break
        rest = order[1:]
        if not rest.size:
            break
        overlaps = iou_one_to_many(boxes[m], boxes[rest])
        thresholds = rule(m, rest, overlaps)
        order = rest[overlaps < thresholds]
    return [dets[i] for i in kept]


def greedy_nms(dets: Sequence[Detection], cfg: NmsConfig = NmsConfig()) -> List[Detection]:
    """Greedy NMS with the fixed threshold ``cfg.nt``."""

    def rule(m: int, rest: np.ndarray, overlaps: np.ndarray) -> np.ndarray:
        return np.full(rest.shape, cfg.nt)

    return _suppress(dets, cfg, rule)


def density_nms(dets: Sequence[Detection], cfg: NmsConfig = NmsConfig()) -> List[Detection]:
    """Density-aware NMS: the threshold of M rises to its predicted density."""
    densities = np.clip(row_norms(_embedding_matrix(dets, "density")), 0.0, 1.0) if dets else None

    def rule(m: int, rest: np.ndarray, overlaps: np.ndarray) -> np.ndarray:
        return np.full(rest.shape, max(cfg.nt, float(densities[m])))

    return _suppress(dets, cfg, rule)


def diversity_nms(dets: Sequence[Detection], cfg: NmsConfig = NmsConfig()) -> List[Detection]:
    """
    Diversity-aware NMS: boxes of a different identity get the higher threshold.

    A zero embedding on either side of a pair gives N_low.
    """
    embeddings = _embedding_matrix(dets, "diversity") if dets else None
    norms = row_norms(embeddings) if dets else None

    def rule(m: int, rest: np.ndarray, overlaps: np.ndarray) -> np.ndarray:
        thresholds = np.full(rest.shape, cfg.n_low)
        # Below n_low nothing is suppressed whatever the distance
        contested = overlaps >= cfg.n_low
        if np.any(contested):
            different = _different_identity(embeddings, norms, m, rest[contested], cfg.delta_t)
            thresholds[contested] = np.where(different, cfg.n_high, cfg.n_low)
        return thresholds

    return _suppress(dets, cfg, rule)


def attribute_nms(dets: Sequence[Detection], cfg: NmsConfig = NmsConfig()) -> List[Detection]:
    """
    Attribute-aware NMS using both the density of M and the embedding distance.

    Distances are only computed for candidates with IoU >= N_t, and only when
    d_M > N_t: otherwise the threshold is N_t on either branch. A candidate
    with a zero embedding has no identity to compare and gets N_t.
    """
    embeddings = _embedding_matrix(dets, "attribute") if dets else None
    norms = row_norms(embeddings) if dets else None
    densities = np.clip(norms, 0.0, 1.0) if dets else None

    def rule(m: int, rest: np.ndarray, overlaps: np.ndarray) -> np.ndarray:
        thresholds = np.full(rest.shape, cfg.nt)
        d_m = float(densities[m])
        if d_m <= cfg.nt:
            return thresholds
        contested = overlaps >= cfg.nt
        if np.any(contested):
            different = _different_identity(embeddings, norms, m, rest[contested], cfg.delta_t)
            thresholds[contested] = np.where(different, max(d_m, cfg.nt), cfg.nt)
        return thresholds

    return _suppress(dets, cfg, rule)


_VARIANTS = {
    NmsVariant.GREEDY: greedy_nms,
    NmsVariant.DENSITY: density_nms,
    NmsVariant.DIVERSITY: diversity_nms,
    NmsVariant.ATTRIBUTE: attribute_nms,
}


def run_nms(
    variant: NmsVariant | str, dets: Sequence[Detection], cfg: NmsConfig = NmsConfig()
) -> List[Detection]:
    """
    Dispatches to one NMS variant.

    Raises:
        ValueError: For an unknown variant name.
        NmsConfigurationError: When the variant needs embeddings that are missing.
    """
    kept = _VARIANTS[NmsVariant(variant)](dets, cfg)
    logger.debug(f"{NmsVariant(variant).value} NMS kept {len(kept)}/{len(dets)} detections")
    return kept

"""
Attribute Service - embedding-vector calculus.

An attribute embedding encodes crowd density as its Euclidean norm and
identity as its direction. Losses and the NMS family both go through these
helpers so they agree on normalisation and distance.
"""

from typing import Sequence, Union
import logging

import numpy as np

from app.back.exceptions import DegenerateEmbeddingError

logger = logging.getLogger(__name__)

# Norms at or below this are treated as having no direction
NORM_EPS = 1e-12

ArrayLike = Union[Sequence[float], np.ndarray]


def _as_vector(e: ArrayLike) -> np.ndarray:
    v = np.asarray(e, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError(f"embedding must be a vector of length >= 2, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite components")
    return v


def density_of(e: ArrayLike) -> float:
    """
    Density encoded by an embedding: its Euclidean norm.

    Norms above 1 are passed through unchanged.
    """
    return float(np.linalg.norm(_as_vector(e)))


def normalize(e: ArrayLike) -> np.ndarray:
    """
    Projects an embedding onto the unit sphere.

    Raises:
        DegenerateEmbeddingError: If the norm is not above ``NORM_EPS``.
    """
    v = _as_vector(e)
    norm = np.linalg.norm(v)
    if norm <= NORM_EPS:
        raise DegenerateEmbeddingError(f"cannot normalise embedding with norm {norm:.3g}")
    return v / norm


def dist(a: ArrayLike, b: ArrayLike) -> float:
    """Euclidean distance between the normalised embeddings, in [0, 2]."""
    return float(np.linalg.norm(normalize(a) - normalize(b)))


def compose(direction: ArrayLike, density: float) -> np.ndarray:
    """
    Builds an embedding with the given direction and density.

    Any density and any direction can be combined, which is what lets a single
    attribute vector carry both quantities at once.
    """
    if density < 0:
        raise ValueError(f"density must be non-negative, got {density}")
    return normalize(direction) * float(density)


def row_norms(matrix: np.ndarray) -> np.ndarray:
    """Norms of every row of an (n, m) embedding matrix."""
    return np.linalg.norm(np.asarray(matrix, dtype=np.float64), axis=-1)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """
    Row-wise :func:`normalize`.

    Raises:
        DegenerateEmbeddingError: If any row has (near) zero norm.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = row_norms(matrix)
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmax(norms <= NORM_EPS))
        raise DegenerateEmbeddingError(f"cannot normalise embedding at row {bad} (zero norm)")
    return matrix / norms[..., None]


def dist_one_to_many(e: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Distances between one embedding and every row of ``others``."""
    return np.linalg.norm(normalize_rows(others) - normalize(e)[None, :], axis=1)

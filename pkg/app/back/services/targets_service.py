"""
Targets Service - ground-truth supervision grids at feature resolution.

Builds the center, Gaussian mask, scale, offset and density targets for one
annotated image. Grids are numpy arrays indexed ``[y, x]`` with shape
``(H // r, W // r)``; cell coordinates are reported as ``(x, y)``.

Every non-ignored object gets the 2x2 block of cells around its real center
``(cx / r, cy / r)`` as positives: ``{floor(c), floor(c) + 1}`` on each axis.
Cells falling outside the grid are dropped, so border objects may have fewer
than four positives.
"""

from typing import List, Optional, Tuple
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, InstanceOf, model_validator

from app.back.services.geometry import BBox, area, pairwise_max_iou

logger = logging.getLogger(__name__)

# Positive cells per object before border clipping
POSITIVES_PER_OBJECT = 4

# Gaussian sigma = extent at feature scale / SIGMA_DIVISOR, floored at MIN_SIGMA cells
SIGMA_DIVISOR = 6.0
MIN_SIGMA = 0.5

Cell = Tuple[int, int]


class GroundTruthScene(BaseModel):
    """Annotated boxes of one image."""

    image_id: str = Field("", description="Identifier carried through to outputs.")
    image_width: int = Field(..., gt=0, description="Image width in pixels.")
    image_height: int = Field(..., gt=0, description="Image height in pixels.")
    boxes: List[InstanceOf[BBox]] = Field(default_factory=list, description="Annotated boxes.")
    ignore: Optional[List[bool]] = Field(None, description="Per-box ignore-region flags.")
    visibility: Optional[List[Optional[float]]] = Field(
        None, description="Per-box visible fraction in [0, 1], when annotated."
    )

    @model_validator(mode="after")
    def _check_boxes(self) -> "GroundTruthScene":
        for i, box in enumerate(self.boxes):
            if not box.inside(self.image_width, self.image_height):
                raise ValueError(
                    f"box {i} {box.as_list()} outside image "
                    f"{self.image_width}x{self.image_height}"
                )
        for name in ("ignore", "visibility"):
            flags = getattr(self, name)
            if flags is not None and len(flags) != len(self.boxes):
                raise ValueError(f"{name} has {len(flags)} entries for {len(self.boxes)} boxes")
        if self.visibility is not None:
            for v in self.visibility:
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ValueError(f"visibility {v} outside [0, 1]")
        return self

    def is_ignored(self, index: int) -> bool:
        return bool(self.ignore[index]) if self.ignore is not None else False

    def active_indices(self) -> List[int]:
        """Indices of the boxes that are not ignore regions."""
        return [i for i in range(len(self.boxes)) if not self.is_ignored(i)]


class ObjectPositives(BaseModel):
    """Positive cells and real center of one supervised object."""

    index: int = Field(..., description="Index of the box in the scene.")
    center: Tuple[float, float] = Field(..., description="Real center at feature scale.")
    cells: List[Cell] = Field(..., description="Positive (x, y) cells, TL/TR/BL/BR order.")
    density: float = Field(0.0, description="Max IoU with any other annotated box.")


class TargetMaps(BaseModel):
    """All supervision grids for one image."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image_id: str = ""
    r: int
    grid_width: int
    grid_height: int
    center: np.ndarray
    gaussian_mask: np.ndarray
    scale: np.ndarray
    scale_owner: np.ndarray
    offset: np.ndarray
    offset_owner: np.ndarray
    density: np.ndarray
    density_owner: np.ndarray
    objects: List[ObjectPositives]

    @property
    def scale_valid(self) -> np.ndarray:
        return self.scale_owner >= 0

    @property
    def offset_valid(self) -> np.ndarray:
        return self.offset_owner >= 0

    @property
    def density_valid(self) -> np.ndarray:
        return self.density_owner >= 0

    @property
    def scale_channels(self) -> int:
        return int(self.scale.shape[-1])


def grid_shape(scene: GroundTruthScene, r: int) -> Tuple[int, int]:
    """
    Feature-grid shape ``(rows, cols)`` for a down-sampling rate.

    Raises:
        ValueError: If ``r`` < 1 or the grid would be empty.
    """
    if r < 1:
        raise ValueError(f"down-sampling rate must be >= 1, got {r}")
    rows, cols = scene.image_height // r, scene.image_width // r
    if rows < 1 or cols < 1:
        raise ValueError(
            f"down-sampling rate {r} leaves an empty grid for "
            f"{scene.image_width}x{scene.image_height}"
        )
    return rows, cols


def positive_cells(cx: float, cy: float, cols: int, rows: int) -> List[Cell]:
    """
    The 2x2 block next to a real center, clipped to the grid.

    Integer-aligned centers use ``floor(c) + 1`` in place of ``ceil(c)`` so
    there are always two distinct cells per axis.
    """
    fx, fy = math.floor(cx), math.floor(cy)
    cells = []
    for y in (fy, fy + 1):
        for x in (fx, fx + 1):
            if 0 <= x < cols and 0 <= y < rows:
                cells.append((x, y))
    return cells


def _feature_center(box: BBox, r: int) -> Tuple[float, float]:
    cx, cy = box.center
    return cx / r, cy / r


def _write_order(scene: GroundTruthScene) -> List[int]:
    # Larger areas first so smaller objects overwrite contested cells;
    # among equal areas the lower index is written last and wins.
    active = scene.active_indices()
    return sorted(active, key=lambda i: (-area(scene.boxes[i]), -i))


def center_target(scene: GroundTruthScene, r: int) -> Tuple[np.ndarray, List[ObjectPositives]]:
    """
    Binary center grid and the positive cells of every non-ignored object.

    Returns:
        tuple: ``(center, objects)`` where ``center`` is a bool array of
        shape ``(rows, cols)``.
    """
    rows, cols = grid_shape(scene, r)
    center = np.zeros((rows, cols), dtype=bool)
    densities = density_values(scene)
    objects = []
    for i in scene.active_indices():
        cx, cy = _feature_center(scene.boxes[i], r)
        cells = positive_cells(cx, cy, cols, rows)
        for x, y in cells:
            center[y, x] = True
        objects.append(
            ObjectPositives(index=i, center=(cx, cy), cells=cells, density=float(densities[i]))
        )
    return center, objects


def gaussian_mask(scene: GroundTruthScene, r: int) -> np.ndarray:
    """
    Penalty-reduction mask M used for negatives of the center loss.

    Each object contributes an elliptical Gaussian around its real center
    (sigma = extent / (6 r), at least half a cell); objects combine by cellwise
    maximum and every positive cell is set to 1.
    """
    rows, cols = grid_shape(scene, r)
    mask = np.zeros((rows, cols), dtype=np.float64)
    xs = np.arange(cols, dtype=np.float64)
    ys = np.arange(rows, dtype=np.float64)
    for i in scene.active_indices():
        box = scene.boxes[i]
        cx, cy = _feature_center(box, r)
        sx = max(box.width / (SIGMA_DIVISOR * r), MIN_SIGMA)
        sy = max(box.height / (SIGMA_DIVISOR * r), MIN_SIGMA)
        gx = np.exp(-((xs - cx) ** 2) / (2.0 * sx * sx))
        gy = np.exp(-((ys - cy) ** 2) / (2.0 * sy * sy))
        np.maximum(mask, gy[:, None] * gx[None, :], out=mask)
        for x, y in positive_cells(cx, cy, cols, rows):
            mask[y, x] = 1.0
    return mask


def scale_target(
    scene: GroundTruthScene, r: int, predict_width: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Log-scale regression target on a 4x4 region per object.

    The region is the 2x2 positive block dilated by one cell on every side,
    clipped to the grid. Channel 0 holds ``log(h)``; channel 1 holds
    ``log(w)`` when ``predict_width``.

    Returns:
        tuple: ``(scale, owner)`` with ``scale`` of shape ``(rows, cols, s)``
        and ``owner`` holding the writing box index (-1 where invalid).

    Raises:
        ValueError: On a zero-height box (or zero-width when ``predict_width``).
    """
    rows, cols = grid_shape(scene, r)
    channels = 2 if predict_width else 1
    scale = np.zeros((rows, cols, channels), dtype=np.float64)
    owner = np.full((rows, cols), -1, dtype=np.int64)
    for i in scene.active_indices():
        box = scene.boxes[i]
        if box.height <= 0:
            raise ValueError(f"box {i} has zero height; log-scale target undefined")
        if predict_width and box.width <= 0:
            raise ValueError(f"box {i} has zero width; log-scale target undefined")

    for i in _write_order(scene):
        box = scene.boxes[i]
        cx, cy = _feature_center(box, r)
        fx, fy = math.floor(cx), math.floor(cy)
        x0, x1 = max(fx - 1, 0), min(fx + 3, cols)
        y0, y1 = max(fy - 1, 0), min(fy + 3, rows)
        if x0 >= x1 or y0 >= y1:
            continue
        scale[y0:y1, x0:x1, 0] = math.log(box.height)
        if predict_width:
            scale[y0:y1, x0:x1, 1] = math.log(box.width)
        owner[y0:y1, x0:x1] = i
    return scale, owner


def offset_target(scene: GroundTruthScene, r: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Four-directional offset from each positive cell to the real center.

    Returns:
        tuple: ``(offset, owner)``; ``offset[y, x] = (cx - x, cy - y)``.
    """
    rows, cols = grid_shape(scene, r)
    offset = np.zeros((rows, cols, 2), dtype=np.float64)
    owner = np.full((rows, cols), -1, dtype=np.int64)
    for i in _write_order(scene):
        cx, cy = _feature_center(scene.boxes[i], r)
        for x, y in positive_cells(cx, cy, cols, rows):
            offset[y, x, 0] = cx - x
            offset[y, x, 1] = cy - y
            owner[y, x] = i
    return offset, owner


def density_values(scene: GroundTruthScene) -> np.ndarray:
    """
    Per-box density: the maximum IoU with any other non-ignored box.

    Ignored boxes, and boxes with no neighbours, get 0.
    """
    densities = np.zeros(len(scene.boxes), dtype=np.float64)
    active = scene.active_indices()
    if active:
        densities[active] = pairwise_max_iou([scene.boxes[i] for i in active])
    return densities


def density_target(scene: GroundTruthScene, r: int = 4) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Density values and the density grid written at each object's positives.

    Returns:
        tuple: ``(densities, density, owner)``; ``densities`` is index-aligned
        with ``scene.boxes``.
    """
    rows, cols = grid_shape(scene, r)
    densities = density_values(scene)
    grid = np.zeros((rows, cols), dtype=np.float64)
    owner = np.full((rows, cols), -1, dtype=np.int64)
    for i in _write_order(scene):
        cx, cy = _feature_center(scene.boxes[i], r)
        for x, y in positive_cells(cx, cy, cols, rows):
            grid[y, x] = densities[i]
            owner[y, x] = i
    return densities, grid, owner


def build_targets(scene: GroundTruthScene, r: int = 4, predict_width: bool = False) -> TargetMaps:
    """
    Builds every supervision grid for one image.

    Args:
        scene (GroundTruthScene): Annotated image.
        r (int): Down-sampling rate. Default is 4.
        predict_width (bool): Add a log-width scale channel.

    Returns:
        TargetMaps: Center, mask, scale, offset and density targets.
    """
    rows, cols = grid_shape(scene, r)
    center, objects = center_target(scene, r)
    mask = gaussian_mask(scene, r)
    scale, scale_owner = scale_target(scene, r, predict_width)
    offset, offset_owner = offset_target(scene, r)
    _, density, density_owner = density_target(scene, r)

    logger.debug(
        f"Targets for '{scene.image_id}': grid={cols}x{rows}, objects={len(objects)}, "
        f"positives={int(center.sum())}"
    )
    return TargetMaps(
        image_id=scene.image_id,
        r=r,
        grid_width=cols,
        grid_height=rows,
        center=center,
        gaussian_mask=mask,
        scale=scale,
        scale_owner=scale_owner,
        offset=offset,
        offset_owner=offset_owner,
        density=density,
        density_owner=density_owner,
        objects=objects,
    )

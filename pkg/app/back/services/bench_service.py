"""
Bench Service - compares the NMS variants on synthetic crowds.

For each seed a synthetic dataset is generated once; every requested variant
is then run on the same detections and evaluated against the same scenes.
"""

from typing import List, Sequence
import logging

import pandas as pd

from app.back.services.eval_service import EvalSettings, match, mr_fppi_curve
from app.back.services.nms_service import NmsConfig, NmsVariant, run_nms
from app.back.services.synth_service import SynthConfig, generate_dataset
from app.back.workers import starmap_ordered

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["seed", "variant", "mr2", "kept", "true_positives", "false_positives"]

ALL_VARIANTS = [v.value for v in NmsVariant]


def run_bench(
    cfg: SynthConfig,
    variants: Sequence[str] = tuple(ALL_VARIANTS),
    nms_cfg: NmsConfig = NmsConfig(),
    settings: EvalSettings = EvalSettings(),
    n_seeds: int = 1,
) -> pd.DataFrame:
    """
    Runs synth -> NMS -> evaluation for consecutive seeds.

    Args:
        cfg (SynthConfig): Generator parameters; ``cfg.seed`` is the first seed.
        variants (Sequence[str]): NMS variants to compare.
        nms_cfg (NmsConfig): Thresholds shared by every variant.
        settings (EvalSettings): Matching and MR^-2 settings.
        n_seeds (int): Number of seeds, starting at ``cfg.seed``.

    Returns:
        pd.DataFrame: One row per (seed, variant), columns ``BENCH_COLUMNS``.
    """
    if n_seeds < 1:
        raise ValueError(f"n_seeds must be >= 1, got {n_seeds}")
    variants = [NmsVariant(v) for v in variants]

    rows: List[dict] = []
    for seed in range(cfg.seed, cfg.seed + n_seeds):
        scenes, dets = generate_dataset(cfg.model_copy(update={"seed": seed}))
        for variant in variants:
            results = starmap_ordered(
                lambda image_dets, scene: match(
                    run_nms(variant, image_dets, nms_cfg),
                    scene,
                    settings.iou_threshold,
                    settings.subset,
                ),
                list(zip(dets, scenes)),
            )
            curve = mr_fppi_curve(results, settings)
            rows.append(
                {
                    "seed": seed,
                    "variant": variant.value,
                    "mr2": curve.mr2,
                    "kept": sum(len(r.labels) for r in results),
                    "true_positives": sum(r.true_positives for r in results),
                    "false_positives": sum(r.false_positives for r in results),
                }
            )
        logger.info(f"Bench seed {seed}: " + ", ".join(
            f"{row['variant']}={row['mr2']:.4f}" for row in rows[-len(variants):]
        ))

    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def bench_to_csv(table: pd.DataFrame) -> str:
    """Bench table rendered as CSV text."""
    return table.to_csv(index=False, float_format="%.10g", lineterminator="\n")


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Mean mr2 and counts per variant, in first-seen variant order."""
    grouped = table.groupby("variant", sort=False)[["mr2", "kept", "true_positives", "false_positives"]]
    return grouped.mean().reset_index()

"""
Command line for the CrowdAttr toolkit.

Subcommands read and write JSON-lines records (CSV for tables) so that
every pipeline step can be chained through files or pipes:

    python -m app.back.cli synth --seed 7 --annotations-out gt.jsonl --detections-out det.jsonl
    python -m app.back.cli nms det.jsonl --variant attribute --out kept.jsonl
    python -m app.back.cli eval --detections kept.jsonl --annotations gt.jsonl
    python -m app.back.cli bench --seed 7 --n-seeds 20

Exit status: 0 on success, 1 on a data error, 2 on a usage error.
Diagnostics go to stderr; results go to stdout unless ``--out`` is given.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
import argparse
import logging
import sys

from dotenv import dotenv_values

from app.back.config import config
from app.back.exceptions import CrowdAttrError
from app.back.records import check_embedding_dims, open_output, read_jsonl, write_jsonl
from app.back.schemas import (
    AnnotationRecord,
    DetectionRecord,
    EvalReport,
    PredictedMapsRecord,
    TargetMapsRecord,
)
from app.back.services.bench_service import ALL_VARIANTS, bench_to_csv, run_bench, summarize
from app.back.services.eval_service import SUBSET_PRESETS, EvalSettings, curve_to_csv
from app.back.services.loss_service import LossWeights
from app.back.services.nms_service import NmsConfig, NmsVariant
from app.back.services.pipeline_service import (
    decode_records,
    eval_records,
    loss_records,
    nms_records,
    resolve_subset,
    synth_records,
    targets_records,
)
from app.back.services.synth_service import SynthConfig
from app.back.workers import close_worker_pool, initialize_worker_pool

logger = logging.getLogger("app.back.cli")

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE = 2

TRUE_WORDS = {"1", "true", "yes", "on"}

# Generator flags: dest -> SynthConfig field. Unset flags keep the base config.
SYNTH_FLAG_FIELDS = {
    "n_images": "n_images",
    "image_width": "image_width",
    "image_height": "image_height",
    "people_per_image": "people_per_image",
    "crowd_pairs": "crowd_pairs",
    "pair_iou": "pair_iou_range",
    "height_range": "height_range",
    "jitter": "box_jitter_sigma",
    "tp_scores": "tp_score_range",
    "fp_rate": "fp_rate",
    "fp_scores": "fp_score_range",
    "duplicates": "duplicates_per_gt",
    "embedding_mode": "embedding_mode",
    "embedding_dim": "embedding_dim",
    "noise_angle": "noise_angle_sigma",
    "noise_norm": "noise_norm_sigma",
}


def _common_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--out", default=None, help="Output path (default: stdout).")
    parser.add_argument(
        "--workers", type=int, default=config.WORKERS, help="Threads for per-image work."
    )
    parser.add_argument(
        "--config", default=None, help="key=value file replacing flag defaults."
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Log at DEBUG level to stderr."
    )
    return parser


def _nms_flags() -> argparse.ArgumentParser:
    defaults = NmsConfig()
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--nt", type=float, default=defaults.nt, help="Base IoU threshold.")
    parser.add_argument("--n-high", type=float, default=defaults.n_high, help="Diversity-aware high threshold.")
    parser.add_argument("--n-low", type=float, default=defaults.n_low, help="Diversity-aware low threshold.")
    parser.add_argument("--delta-t", type=float, default=defaults.delta_t, help="Embedding distance threshold.")
    parser.add_argument("--score-floor", type=float, default=defaults.score_floor, help="Drop scores below this.")
    parser.add_argument("--max-keep", type=int, default=None, help="Keep at most this many per image.")
    return parser


def _eval_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--iou", type=float, default=0.5, help="Matching IoU threshold.")
    parser.add_argument("--subset", choices=sorted(SUBSET_PRESETS), default="all", help="Ground-truth subset.")
    parser.add_argument("--fppi-samples", type=int, default=9, help="FPPI reference points.")
    return parser


def _synth_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=0, help="Random seed.")
    parser.add_argument("--n-images", type=int, default=None, help="Images per seed (default 10).")
    parser.add_argument("--image-width", type=int, default=None)
    parser.add_argument("--image-height", type=int, default=None)
    parser.add_argument("--people-per-image", type=int, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--crowd-pairs", type=float, default=None, help="Fraction of people in pairs.")
    parser.add_argument("--pair-iou", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--height-range", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--jitter", type=float, default=None, help="Box jitter sigma in pixels.")
    parser.add_argument("--tp-scores", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--fp-rate", type=float, default=None, help="Background FPs per image.")
    parser.add_argument("--fp-scores", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--duplicates", type=int, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--embedding-mode", choices=["oracle", "noisy", "constant"], default=None)
    parser.add_argument("--embedding-dim", type=int, default=config.DEFAULT_EMBEDDING_DIM)
    parser.add_argument("--noise-angle", type=float, default=None)
    parser.add_argument("--noise-norm", type=float, default=None)
    return parser


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    """
    Builds the argument parser.

    Returns:
        tuple: The top-level parser and the subcommand parsers by name.
    """
    parser = argparse.ArgumentParser(
        prog="crowdattr",
        description="Attribute-aware crowd detection toolkit: NMS, evaluation, targets, losses and synthetic benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common, nms_flags, eval_flags, synth_flags = _common_flags(), _nms_flags(), _eval_flags(), _synth_flags()
    fmt = argparse.ArgumentDefaultsHelpFormatter
    subcommands: Dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("nms", parents=[common, nms_flags], formatter_class=fmt, help="Suppress duplicate detections.")
    p.add_argument("input", nargs="?", default="-", help="Detections JSON-lines ('-' for stdin).")
    p.add_argument("--variant", choices=ALL_VARIANTS, default=NmsVariant.ATTRIBUTE.value)
    subcommands["nms"] = p

    p = sub.add_parser("eval", parents=[common, eval_flags], formatter_class=fmt, help="Compute MR^-2.")
    p.add_argument("--detections", required=True, help="Detections JSON-lines.")
    p.add_argument("--annotations", required=True, help="Annotations JSON-lines.")
    p.add_argument("--curve-out", default=None, help="Write the (fppi, miss_rate) curve as CSV.")
    subcommands["eval"] = p

    p = sub.add_parser("targets", parents=[common], formatter_class=fmt, help="Build supervision grids.")
    p.add_argument("--annotations", required=True, help="Annotations JSON-lines.")
    p.add_argument("--r", type=int, default=config.DEFAULT_DOWNSAMPLE, help="Down-sampling rate.")
    p.add_argument("--predict-width", action="store_true", help="Add the log-width scale channel.")
    subcommands["targets"] = p

    weights = LossWeights()
    p = sub.add_parser("loss", parents=[common], formatter_class=fmt, help="Evaluate the joint loss.")
    p.add_argument("--predictions", required=True, help="Predicted maps JSON-lines.")
    p.add_argument("--targets", required=True, help="Target maps JSON-lines.")
    p.add_argument("--lambda-c", type=float, default=weights.center)
    p.add_argument("--lambda-s", type=float, default=weights.scale)
    p.add_argument("--lambda-o", type=float, default=weights.offset)
    p.add_argument("--lambda-a", type=float, default=weights.attribute)
    p.add_argument("--lambda-den", type=float, default=weights.density)
    p.add_argument("--margin", type=float, default=weights.margin)
    p.add_argument("--gamma", type=float, default=weights.gamma)
    p.add_argument("--beta", type=float, default=weights.beta)
    subcommands["loss"] = p

    p = sub.add_parser("synth", parents=[common, synth_flags], formatter_class=fmt, help="Generate synthetic crowds.")
    p.add_argument("--annotations-out", required=True, help="Annotations JSON-lines output.")
    p.add_argument("--detections-out", required=True, help="Detections JSON-lines output.")
    subcommands["synth"] = p

    p = sub.add_parser(
        "bench", parents=[common, synth_flags, nms_flags, eval_flags], formatter_class=fmt,
        help="Compare NMS variants on synthetic crowds (CSV).",
    )
    p.add_argument("--n-seeds", type=int, default=1, help="Consecutive seeds starting at --seed.")
    p.add_argument("--variants", nargs="+", choices=ALL_VARIANTS, default=list(ALL_VARIANTS))
    p.add_argument("--summary", action="store_true", help="Print per-variant means instead of per-seed rows.")
    subcommands["bench"] = p

    p = sub.add_parser("decode", parents=[common], formatter_class=fmt, help="Decode predicted maps into detections.")
    p.add_argument("--predictions", required=True, help="Predicted maps JSON-lines.")
    p.add_argument("--r", type=int, default=config.DEFAULT_DOWNSAMPLE, help="Down-sampling rate.")
    p.add_argument("--score-threshold", type=float, default=0.1)
    p.add_argument("--aspect-ratio", type=float, default=0.41, help="Width / height without a width channel.")
    subcommands["decode"] = p

    return parser, subcommands


def _coerce(parser: argparse.ArgumentParser, action: argparse.Action, key: str, raw: Optional[str]):
    if raw is None:
        parser.error(f"config key '{key}' has no value")
    if action.nargs == 0:
        return raw.strip().lower() in TRUE_WORDS
    convert = action.type or str
    try:
        if action.nargs is None or action.nargs == "?":
            values = [convert(raw.strip())]
        else:
            values = [convert(part) for part in raw.replace(",", " ").split()]
    except ValueError:
        parser.error(f"config key '{key}': cannot parse '{raw}'")
    if isinstance(action.nargs, int) and len(values) != action.nargs:
        parser.error(f"config key '{key}' needs {action.nargs} values, got {len(values)}")
    if action.choices is not None:
        for value in values:
            if value not in action.choices:
                parser.error(f"config key '{key}': '{value}' not in {sorted(action.choices)}")
    if action.nargs is None or action.nargs == "?":
        return values[0]
    return values


def apply_config_file(parser: argparse.ArgumentParser, path: str) -> Dict[str, object]:
    """
    Installs the values of a key=value file as defaults of ``parser``.

    Keys are option names with dashes or underscores (``n-high``, ``n_high``).
    Flags given on the command line still win.

    Raises:
        OSError: If the file cannot be read.
        SystemExit: Through ``parser.error`` for unknown keys or bad values.
    """
    with open(path, "r", encoding="utf-8") as handle:
        values = dotenv_values(stream=handle)

    actions = {a.dest: a for a in parser._actions if a.option_strings or a.dest == "input"}
    defaults: Dict[str, object] = {}
    for key, raw in values.items():
        dest = key.strip().lstrip("-").replace("-", "_").lower()
        if dest not in actions or dest in {"config", "help"}:
            parser.error(f"unknown config key '{key}' in {path}")
        defaults[dest] = _coerce(parser, actions[dest], key, raw)
    parser.set_defaults(**defaults)
    logger.debug(f"Loaded {len(defaults)} defaults from {path}")
    return defaults


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _nms_config(args: argparse.Namespace) -> NmsConfig:
    return NmsConfig(
        nt=args.nt,
        n_high=args.n_high,
        n_low=args.n_low,
        delta_t=args.delta_t,
        score_floor=args.score_floor,
        max_keep=args.max_keep,
    )


def _eval_settings(args: argparse.Namespace) -> EvalSettings:
    return EvalSettings(
        iou_threshold=args.iou,
        fppi_samples=args.fppi_samples,
        subset=resolve_subset(args.subset),
    )


def _synth_config(args: argparse.Namespace, base: SynthConfig) -> SynthConfig:
    params = base.model_dump()
    params["seed"] = args.seed
    for dest, field in SYNTH_FLAG_FIELDS.items():
        value = getattr(args, dest)
        if value is not None:
            params[field] = tuple(value) if isinstance(value, list) else value
    return SynthConfig(**params)


def _read_detections(path: str) -> List[DetectionRecord]:
    records = read_jsonl(path, DetectionRecord)
    check_embedding_dims(records, path)
    return records


def cmd_nms(args: argparse.Namespace) -> int:
    records = _read_detections(args.input)
    write_jsonl(args.out, nms_records(records, args.variant, _nms_config(args)))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _eval_settings(args)
    detections = _read_detections(args.detections)
    annotations = read_jsonl(args.annotations, AnnotationRecord)
    curve = eval_records(detections, annotations, settings)
    write_jsonl(args.out, [EvalReport.from_curve(curve, settings, with_points=False)])
    if args.curve_out:
        with open_output(args.curve_out) as handle:
            handle.write(curve_to_csv(curve))
        logger.info(f"Curve with {len(curve.points)} points written to {args.curve_out}")
    return EXIT_OK


def cmd_targets(args: argparse.Namespace) -> int:
    annotations = read_jsonl(args.annotations, AnnotationRecord)
    write_jsonl(args.out, targets_records(annotations, args.r, args.predict_width))
    return EXIT_OK


def cmd_loss(args: argparse.Namespace) -> int:
    weights = LossWeights(
        center=args.lambda_c,
        scale=args.lambda_s,
        offset=args.lambda_o,
        attribute=args.lambda_a,
        density=args.lambda_den,
        margin=args.margin,
        gamma=args.gamma,
        beta=args.beta,
    )
    predictions = read_jsonl(args.predictions, PredictedMapsRecord)
    targets = read_jsonl(args.targets, TargetMapsRecord)
    write_jsonl(args.out, loss_records(predictions, targets, weights))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _synth_config(args, SynthConfig())
    annotations, detections = synth_records(cfg)
    write_jsonl(args.annotations_out, annotations)
    write_jsonl(args.detections_out, detections)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    table = run_bench(
        _synth_config(args, SynthConfig.crowded()),
        variants=args.variants,
        nms_cfg=_nms_config(args),
        settings=_eval_settings(args),
        n_seeds=args.n_seeds,
    )
    if args.summary:
        table = summarize(table)
    with open_output(args.out) as handle:
        handle.write(bench_to_csv(table))
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    predictions = read_jsonl(args.predictions, PredictedMapsRecord)
    write_jsonl(args.out, decode_records(predictions, args.r, args.score_threshold, args.aspect_ratio))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "nms": cmd_nms,
    "eval": cmd_eval,
    "targets": cmd_targets,
    "loss": cmd_loss,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "decode": cmd_decode,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one subcommand.

    Args:
        argv (Sequence[str], optional): Arguments without the program name;
            ``sys.argv[1:]`` when omitted.

    Returns:
        int: Exit status (0 success, 1 data error, 2 usage error).
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subcommands = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            apply_config_file(subcommands[args.command], args.config)
            args = parser.parse_args(argv)
    except SystemExit as exit_:
        return exit_.code if isinstance(exit_.code, int) else EXIT_USAGE
    except OSError as e:
        print(f"crowdattr: cannot read config file: {e}", file=sys.stderr)
        return EXIT_DATA_ERROR

    _configure_logging(args.verbose)
    try:
        if args.workers < 1:
            parser.error("--workers must be >= 1")
        initialize_worker_pool(args.workers)
        return COMMANDS[args.command](args)
    except SystemExit as exit_:
        return exit_.code if isinstance(exit_.code, int) else EXIT_USAGE
    except (CrowdAttrError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_DATA_ERROR
    finally:
        close_worker_pool()


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

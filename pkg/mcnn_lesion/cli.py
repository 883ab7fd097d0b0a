#!/usr/bin/env python3
"""
Command-line interface for mcnn-lesion.

This module provides the batch front end: generating a synthetic dataset,
training an additive-sample ensemble, evaluating it with ROC/AUC exports
and predicting on a manifest. Diagnostics go to stderr; stdout carries only
command results (class counts, the per-round training log).
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

from .src.additive_ensemble import Ensemble, RoundStats, load_ensemble, save_ensemble, train_mcnn
from .src.artifacts import ArtifactTracker
from .src.config import RunConfig, load_run_config, resolved_config_path, save_config
from .src.constants import (
    DATA_DIR,
    EXIT_OK,
    EXIT_UNEXPECTED,
    IMAGES_DIR,
    LOGGER_NAME,
    MANIFEST_CSV,
    METRICS_JSON,
    ROC_CSV_PATTERN,
    ROC_SVG,
    SPLIT_NAMES,
    TRAINING_SUMMARY_JSON,
)
from .src.data_io import generate_synthetic, load_manifest, read_manifest_header, split, write_image, write_manifest
from .src.evaluation import MemberComparison, compare_members, export_roc_csv, export_roc_svg
from .src.exceptions import InputError, VocabularyMismatchError
from .src.models import ClassVocab, Dataset
from .src.utils import format_error_lines, handle_exception

# Configure logging
logger = logging.getLogger("mcnn-lesion.cli")

DEBUG_ENV = "MCNN_DEBUG"

# ANSI color codes for terminal output
RED = "\033[91m"
RESET = "\033[0m"


def print_error(message: str) -> None:
    """Print an error line to stderr, in red on a terminal."""
    if sys.stderr.isatty():
        print(f"{RED}{message}{RESET}", file=sys.stderr)
    else:
        print(message, file=sys.stderr)


def setup_logging(debug: bool = False) -> None:
    """
    Configure stderr logging for a CLI run.

    Args:
        debug: Lower the package logger to DEBUG (also enabled by MCNN_DEBUG)
    """
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    env_debug = os.environ.get(DEBUG_ENV, "").lower() in ("1", "true", "yes")
    logging.getLogger(LOGGER_NAME).setLevel(logging.DEBUG if debug or env_debug else logging.INFO)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested config overrides from command-line flags."""
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "threshold", None) is not None:
        overrides.setdefault("ensemble", {})["threshold"] = args.threshold
    if getattr(args, "manifest", None) is not None:
        overrides.setdefault("data", {})["manifest"] = args.manifest
    if getattr(args, "image_dir", None) is not None:
        overrides.setdefault("data", {})["image_dir"] = args.image_dir
    return overrides


def _write_dataset(dataset: Dataset, directory: Path, tracker: ArtifactTracker) -> Path:
    """Write images/<id>.pgm and manifest.csv for a dataset."""
    for sample in dataset:
        write_image(directory / IMAGES_DIR / f"{sample.id}.pgm", sample.image, tracker)
    return write_manifest(dataset, directory / MANIFEST_CSV, tracker)


def _write_json(tracker: ArtifactTracker, path: Path, document: Dict[str, Any]) -> Path:
    return tracker.write_text(path, json.dumps(document, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def handle_synth(args: argparse.Namespace) -> int:
    """
    Handle the 'synth' command: render the synthetic dataset to disk.

    Writes `<out>/images/*.pgm`, `<out>/manifest.csv` and the resolved
    config, then prints one `CODE<TAB>count` line per class.
    """
    config = load_run_config(args.config, _overrides(args))
    out_dir = Path(config.out_dir)
    dataset = generate_synthetic(config.data.synth, ClassVocab.from_codes(config.data.class_codes))
    with ArtifactTracker() as tracker:
        _write_dataset(dataset, out_dir, tracker)
        save_config(config, resolved_config_path(out_dir), tracker)
    for code, count in dataset.class_counts().items():
        print(f"{code}\t{count}")
    logger.info(f"Wrote {len(dataset)} images and {MANIFEST_CSV} to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_training_data(
    config: RunConfig, tracker: ArtifactTracker
) -> Tuple[Dataset, Dataset, Dataset]:
    """Train / validation / test splits from the configured data source."""
    vocab = ClassVocab.from_codes(config.data.class_codes)
    if config.data.manifest is not None:
        dataset = load_manifest(config.data.manifest, config.data.image_dir, vocab=vocab)
        return split(dataset, config.data.split, config.seed)

    dataset = generate_synthetic(config.data.synth, vocab)
    data_dir = Path(config.out_dir) / DATA_DIR
    _write_dataset(dataset, data_dir, tracker)
    parts = split(dataset, config.data.split, config.seed)
    for name, part in zip(SPLIT_NAMES, parts):
        write_manifest(part, data_dir / f"{name}.csv", tracker)
    return parts


def _macro(comparison: Optional[MemberComparison]) -> Dict[str, Any]:
    if comparison is None:
        return {"fused_macro_auc": None, "round1_macro_auc": None, "fused_accuracy": None}
    return {
        "fused_macro_auc": comparison.fused.macro_auc,
        "round1_macro_auc": comparison.members[0].macro_auc,
        "fused_accuracy": comparison.fused.accuracy,
    }


def _compare(ensemble: Ensemble, dataset: Dataset, workers: int) -> Optional[MemberComparison]:
    if len(dataset) == 0:
        return None
    try:
        return compare_members(ensemble.score(dataset, workers), dataset.label_vector(), dataset.vocab)
    except InputError as e:
        logger.warning(f"Cannot evaluate split: {e.message}")
        return None


def training_summary(
    ensemble: Ensemble, train_set: Dataset, validation_set: Dataset, workers: int = 1
) -> Dict[str, Any]:
    """
    Train-versus-validation AUC of the fused ensemble and of its first member.
    """
    return {
        "ensemble_size": len(ensemble),
        "stop_reason": ensemble.stop_reason.value if ensemble.stop_reason else None,
        "train": _macro(_compare(ensemble, train_set, workers)),
        "validation": _macro(_compare(ensemble, validation_set, workers)),
    }


def handle_train(args: argparse.Namespace) -> int:
    """
    Handle the 'train' command: train an ensemble and write its directory.

    stdout receives one tab-separated line per round:
    round, train_size, selected, mean_top_score.
    """
    config = load_run_config(args.config, _overrides(args))
    out_dir = Path(config.out_dir)

    def on_round(stats: RoundStats) -> None:
        print(f"{stats.round}\t{stats.train_size}\t{stats.selected}\t{stats.mean_top_score:.6f}", flush=True)

    with ArtifactTracker() as tracker:
        tracker.make_dir(out_dir)
        train_set, validation_set, _ = _load_training_data(config, tracker)
        ensemble = train_mcnn(
            train_set, config.ensemble, config.seed, config.model,
            on_round=on_round, workers=args.workers,
        )
        save_ensemble(ensemble, out_dir, tracker)
        save_config(config, resolved_config_path(out_dir), tracker)
        _write_json(tracker, out_dir / TRAINING_SUMMARY_JSON,
                    training_summary(ensemble, train_set, validation_set, args.workers))
    logger.info(f"Trained {len(ensemble)} models into {out_dir} ({ensemble.stop_reason.value})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / predict
# ---------------------------------------------------------------------------

def check_vocabulary(expected: ClassVocab, manifest: str) -> Tuple[str, ...]:
    """
    Compare a manifest header with an ensemble vocabulary.

    Returns:
        The manifest's class codes (empty for an unlabelled manifest)

    Raises:
        VocabularyMismatchError: If the header names a different class set
    """
    found = read_manifest_header(manifest)
    if found and set(found) != set(expected.codes):
        raise VocabularyMismatchError(
            "Manifest classes do not match the ensemble vocabulary",
            expected=expected.codes, found=found,
        )
    return found


def handle_eval(args: argparse.Namespace) -> int:
    """
    Handle the 'eval' command: fused-score metrics and ROC exports.

    Writes metrics.json (fused summary plus per-member summaries), one
    roc_<CODE>.csv per evaluable class and roc.svg.
    """
    ensemble = load_ensemble(args.ensemble)
    check_vocabulary(ensemble.vocab, args.manifest)
    dataset = load_manifest(args.manifest, args.image_dir, ensemble.vocab)
    if len(dataset) == 0:
        raise InputError("Manifest lists no samples", {"manifest": args.manifest})
    out_dir = Path(args.out) if args.out else Path(args.ensemble) / "eval"

    comparison = compare_members(ensemble.score(dataset, args.workers), dataset.label_vector(), ensemble.vocab)
    fused = comparison.fused
    metrics = {
        **fused.to_dict(),
        "ensemble_size": len(ensemble),
        "members": [m.to_dict() for m in comparison.members],
    }
    with ArtifactTracker() as tracker:
        tracker.make_dir(out_dir)
        _write_json(tracker, out_dir / METRICS_JSON, metrics)
        for curve in fused.curves:
            code = ensemble.vocab.codes[curve.class_index]
            export_roc_csv(curve, out_dir / ROC_CSV_PATTERN.format(code=code), tracker)
        export_roc_svg(fused.curves, out_dir / ROC_SVG, ensemble.vocab, tracker=tracker)
    logger.info(f"Macro AUC {fused.macro_auc}, accuracy {fused.accuracy:.4f}; wrote {out_dir}")
    return EXIT_OK


def encode_predictions(ensemble: Ensemble, dataset: Dataset, workers: int = 1) -> str:
    """
    Predictions CSV: image, predicted_class, winning_model, winning_score.

    winning_model is the 1-based member number (model_001.mcnn is 1).
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["image", "predicted_class", "winning_model", "winning_score"])
    for prediction in ensemble.predict(dataset, workers):
        writer.writerow([
            prediction.sample_id,
            ensemble.vocab.codes[prediction.label],
            prediction.model_index + 1,
            repr(prediction.score),
        ])
    return buffer.getvalue()


def handle_predict(args: argparse.Namespace) -> int:
    """Handle the 'predict' command: fused predictions in manifest order."""
    ensemble = load_ensemble(args.ensemble)
    check_vocabulary(ensemble.vocab, args.manifest)
    dataset = load_manifest(args.manifest, args.image_dir, ensemble.vocab, require_labels=False)
    out_path = Path(args.out) if args.out else Path("predictions.csv")
    text = encode_predictions(ensemble, dataset, args.workers)
    with ArtifactTracker() as tracker:
        tracker.write_text(out_path, text)
    logger.info(f"Wrote {len(dataset)} predictions to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="mcnn-lesion",
        description="Additive-sample ensembles of micro-CNNs for lesion classification",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  mcnn-lesion synth --out data/synth                     # Render the synthetic dataset
  mcnn-lesion train --config run.json --seed 7           # Train an ensemble
  mcnn-lesion train --threshold 0.8 --out runs/t08       # Override the selection threshold
  mcnn-lesion eval --ensemble runs/t08 --manifest runs/t08/data/validation.csv
  mcnn-lesion predict --ensemble runs/t08 --manifest new.csv --out predictions.csv
        """,
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    subparsers = parser.add_subparsers(dest="command", help="Command")

    def run_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="Master seed (overrides the config)")
        p.add_argument("--out", help="Output directory (overrides the config)")
        p.add_argument("--debug", action="store_true", default=argparse.SUPPRESS, help="Enable debug logging")

    synth_parser = subparsers.add_parser("synth", help="Generate the synthetic dataset")
    run_options(synth_parser)

    train_parser = subparsers.add_parser("train", help="Train an additive-sample ensemble")
    run_options(train_parser)
    train_parser.add_argument("--threshold", type=float, help="Top-score selection threshold")
    train_parser.add_argument("--manifest", help="Train on this manifest instead of synthetic data")
    train_parser.add_argument("--image-dir", help="Image directory of the manifest")
    train_parser.add_argument("--workers", type=int, default=1, help="Scoring threads")

    for name, help_text, out_help in (
        ("eval", "Evaluate an ensemble on a labelled manifest", "Output directory (default <ensemble>/eval)"),
        ("predict", "Predict classes for a manifest", "Output CSV (default predictions.csv)"),
    ):
        p = subparsers.add_parser(name, help=help_text)
        p.add_argument("--ensemble", required=True, help="Ensemble directory")
        p.add_argument("--manifest", required=True, help="Manifest CSV")
        p.add_argument("--image-dir", help="Image directory (default <manifest dir>/images)")
        p.add_argument("--out", help=out_help)
        p.add_argument("--workers", type=int, default=1, help="Scoring threads")
        p.add_argument("--debug", action="store_true", default=argparse.SUPPRESS, help="Enable debug logging")

    return parser


HANDLERS = {
    "synth": handle_synth,
    "train": handle_train,
    "eval": handle_eval,
    "predict": handle_predict,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    Args:
        argv: Arguments without the program name (default sys.argv[1:])

    Returns:
        Process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    debug = bool(getattr(args, "debug", False))
    setup_logging(debug)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    try:
        return HANDLERS[args.command](args)
    except KeyboardInterrupt:
        print_error("Interrupted")
        return EXIT_UNEXPECTED
    except Exception as e:
        error = handle_exception(e, log_error=debug, include_traceback=debug)
        for line in format_error_lines(error):
            print_error(line)
        if debug and "detail" in error:
            print(error["detail"], file=sys.stderr)
        return int(error["exit_code"])


def cli_main() -> Optional[int]:
    """
    Entry point for the CLI when installed as a package.

    Returns:
        Optional exit code (None for success, non-zero for error)
    """
    code = main()
    return None if code == EXIT_OK else code


if __name__ == "__main__":
    sys.exit(cli_main())

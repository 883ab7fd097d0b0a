#!/usr/bin/env python3
"""
Additive-sample ensemble of micro-CNNs.

This module implements the multiple-model training scheme: the first model
trains briefly on the whole training set; every later model is warm-started
from its predecessor and trained on the samples the predecessor scored
below the threshold (optionally together with the ones it misclassified).
At prediction time each sample takes the class of whichever member gives
it the highest score.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .config import EnsembleConfig, ModelConfig
from .constants import ENSEMBLE_FORMAT_VERSION, ENSEMBLE_JSON, MODEL_FILE_PATTERN, ROW_SUM_TOLERANCE
from .exceptions import ArtifactError, EnsembleFormatError, InputError, ShapeError
from .micro_cnn import Model, TrainReport, build_model, load_model, predict_scores, save_model, train, warm_start
from .models import (
    ClassVocab,
    Dataset,
    LabelVector,
    NextSetMode,
    ScoreMatrix,
    SelectionPredicate,
    StopReason,
    check_aligned,
)

if TYPE_CHECKING:
    from .artifacts import ArtifactTracker

# Configure logging
logger = logging.getLogger("mcnn-lesion.ensemble")


def top_score(row: Sequence[float]) -> Tuple[float, int]:
    """
    Highest probability of a score row and its class index.

    Ties go to the lowest class index.

    Args:
        row: Probability vector

    Returns:
        (score, class_index)

    Raises:
        InputError: If the row is empty, out of [0,1] or does not sum to 1
    """
    values = np.asarray(row, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise InputError("top_score needs a non-empty probability row")
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise InputError("Probability row entries must be finite and in [0,1]")
    if abs(values.sum() - 1.0) > ROW_SUM_TOLERANCE:
        raise InputError("Probability row does not sum to 1", {"sum": float(values.sum())})
    index = int(np.argmax(values))
    return float(values[index]), index


@dataclass(frozen=True)
class SelectionRow:
    sample_id: str
    top_score: float
    predicted: int
    true_class: int
    selected: bool


@dataclass(frozen=True)
class SelectionReport:
    """
    Per-sample outcome of one selection round.

    Attributes:
        rows: One row per scored sample, in score-matrix order
        threshold: Top-score threshold the round used
        predicate: Selection predicate the round used
    """
    rows: Tuple[SelectionRow, ...]
    threshold: float
    predicate: SelectionPredicate

    @property
    def selected_ids(self) -> Tuple[str, ...]:
        return tuple(r.sample_id for r in self.rows if r.selected)

    @property
    def selected_count(self) -> int:
        return sum(1 for r in self.rows if r.selected)

    @property
    def mean_top_score(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([r.top_score for r in self.rows]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "threshold": self.threshold,
            "predicate": self.predicate.value,
            "rows": [
                [r.sample_id, r.top_score, r.predicted, r.true_class, r.selected] for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SelectionReport":
        rows = tuple(
            SelectionRow(str(sid), float(score), int(pred), int(true), bool(sel))
            for sid, score, pred, true, sel in data["rows"]
        )
        return cls(rows, float(data["threshold"]), SelectionPredicate(data["predicate"]))


def is_selected(score: float, predicted: int, true_class: int, threshold: float,
                predicate: SelectionPredicate) -> bool:
    """The selection predicate for one sample."""
    low = score < threshold
    if predicate is SelectionPredicate.SCORE_ONLY:
        return low
    return low or predicted != true_class


def select_additive_samples(
    scores: ScoreMatrix, labels: LabelVector, cfg: EnsembleConfig
) -> SelectionReport:
    """
    Pick the samples the next model trains on.

    With score_only a sample is selected when its top score is below the
    threshold; with score_or_wrong it is also selected when its top class
    is not its true class.

    Args:
        scores: Scores of the current model
        labels: True classes, aligned with scores
        cfg: Threshold and predicate

    Returns:
        SelectionReport in score order

    Raises:
        InputError: If scores and labels are misaligned
    """
    check_aligned(scores, labels)
    predicted = np.argmax(scores.rows, axis=1) if len(scores) else np.zeros(0, dtype=np.int64)
    tops = scores.rows[np.arange(len(scores)), predicted] if len(scores) else np.zeros(0)
    rows = tuple(
        SelectionRow(
            sample_id=sid,
            top_score=float(tops[i]),
            predicted=int(predicted[i]),
            true_class=int(labels.classes[i]),
            selected=is_selected(float(tops[i]), int(predicted[i]), int(labels.classes[i]),
                                 cfg.threshold, cfg.selection_predicate),
        )
        for i, sid in enumerate(scores.sample_ids)
    )
    report = SelectionReport(rows, cfg.threshold, cfg.selection_predicate)
    logger.debug(f"Selected {report.selected_count} of {len(rows)} samples "
                 f"(threshold {cfg.threshold}, {cfg.selection_predicate.value})")
    return report


def build_next_training_set(report: SelectionReport, full_set: Dataset, cfg: EnsembleConfig) -> Dataset:
    """
    Training set of the next model.

    hard_only yields the selected ids once each; full_plus_duplicates yields
    every id of the full set followed by each selected id a second time.

    Args:
        report: Selection computed over full_set
        full_set: The full training set
        cfg: Next-set mode

    Returns:
        Dataset over the full set's sample store

    Raises:
        InputError: If the report was not computed over full_set
    """
    report_ids = tuple(r.sample_id for r in report.rows)
    if report_ids != full_set.ids:
        raise InputError("Selection report does not cover the full training set in order",
                         {"report": len(report_ids), "full_set": len(full_set)})
    selected = report.selected_ids
    if cfg.next_set_mode is NextSetMode.HARD_ONLY:
        return full_set.subset(selected)
    return full_set.subset(full_set.ids + selected)


@dataclass(frozen=True)
class RoundStats:
    """
    Summary of one round: model `round` was trained, then scored on the full
    training set.

    Attributes:
        round: 1-based model index
        train_size: Size of the set the model trained on
        selected: Samples the model handed on
        mean_top_score: Mean top score over the full training set
    """
    round: int
    train_size: int
    selected: int
    mean_top_score: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "train_size": self.train_size,
            "selected": self.selected,
            "mean_top_score": self.mean_top_score,
        }


@dataclass(frozen=True)
class MemberProvenance:
    """
    Where an ensemble member's training data came from.

    Attributes:
        train_ids: Multiset of sample ids the member trained on
        epochs: Epochs it trained for
        source_report: Selection report of the predecessor (None for the
            first member, which trains on the full set)
        train_report: Outcome of its training
    """
    train_ids: Tuple[str, ...]
    epochs: int
    source_report: Optional[SelectionReport]
    train_report: Optional[TrainReport] = None


@dataclass
class Ensemble:
    """
    An ordered list of trained members with their provenance.

    Attributes:
        models: Members in training order
        provenance: One entry per member
        reports: Selection report of every member over the full training set
        vocab: Class vocabulary
        config: Ensemble settings used for training
        seed: Master training seed
        stop_reason: Why training stopped adding members
    """
    models: List[Model]
    provenance: List[MemberProvenance]
    reports: List[SelectionReport] = field(default_factory=list)
    vocab: ClassVocab = field(default_factory=ClassVocab)
    config: EnsembleConfig = field(default_factory=EnsembleConfig)
    seed: int = 0
    stop_reason: Optional[StopReason] = None

    def __post_init__(self) -> None:
        if not self.models:
            raise InputError("An ensemble needs at least one model")
        if len(self.provenance) != len(self.models):
            raise InputError("Ensemble provenance does not match its models",
                             {"models": len(self.models), "provenance": len(self.provenance)})

    def __len__(self) -> int:
        return len(self.models)

    @property
    def rounds(self) -> List[RoundStats]:
        return [
            RoundStats(m, len(p.train_ids), r.selected_count, r.mean_top_score)
            for m, (p, r) in enumerate(zip(self.provenance, self.reports), start=1)
        ]

    def score(self, dataset: Dataset, workers: int = 1) -> List[ScoreMatrix]:
        """Per-member score matrices for a dataset."""
        return [predict_scores(model, dataset, workers) for model in self.models]

    def predict(self, dataset: Dataset, workers: int = 1) -> List["FusedPrediction"]:
        return fuse_predict(self.score(dataset, workers))


RoundCallback = Callable[[RoundStats], None]


def train_mcnn(
    train_set: Dataset,
    cfg: EnsembleConfig,
    seed: int,
    model_config: Optional[ModelConfig] = None,
    on_round: Optional[RoundCallback] = None,
    workers: int = 1,
) -> Ensemble:
    """
    Train an additive-sample ensemble.

    Model 1 trains on the full set for epochs_first. Each round scores the
    newest model on the full training set and selects samples; training
    stops when nothing is selected, when fewer than min_hard_set samples
    are selected, or when max_models members exist. Otherwise the next
    model is warm-started from the newest one and trained for epochs_rest
    on the set built from the selection.

    Args:
        train_set: Labelled training data
        cfg: Ensemble settings
        seed: Master seed; member m shuffles with SeedSequence([seed, m])
        model_config: Architecture (default: inferred from the data, seeded by seed)
        on_round: Called with the stats of every finished round
        workers: Scoring threads

    Returns:
        The trained ensemble

    Raises:
        InputError: If train_set is empty or unlabelled
    """
    if len(train_set) == 0:
        raise InputError("Cannot train an ensemble on an empty training set")
    if not train_set.has_labels:
        raise InputError("Ensemble training needs labelled samples")
    if model_config is None:
        model_config = ModelConfig(
            input_shape=train_set.image_shape,
            num_classes=train_set.vocab.num_classes,
            seed=seed,
        )
    if model_config.num_classes != train_set.vocab.num_classes:
        raise ShapeError("Model class count does not match the vocabulary", dimension="num_classes",
                         expected=train_set.vocab.num_classes, actual=model_config.num_classes)

    labels = train_set.label_vector()
    models: List[Model] = []
    provenance: List[MemberProvenance] = []
    reports: List[SelectionReport] = []

    model = build_model(model_config)
    current = train_set
    epochs = cfg.epochs_first
    source: Optional[SelectionReport] = None
    stop_reason = StopReason.MAX_MODELS

    for m in range(1, cfg.max_models + 1):
        logger.info(f"Training model {m} on {len(current)} samples for {epochs} epochs")
        train_report = train(model, current, epochs, cfg.batch_size, cfg.sgd,
                             np.random.SeedSequence([seed, m]))
        models.append(model)
        provenance.append(MemberProvenance(current.ids, epochs, source, train_report))

        report = select_additive_samples(predict_scores(model, train_set, workers), labels, cfg)
        reports.append(report)
        stats = RoundStats(m, len(current), report.selected_count, report.mean_top_score)
        logger.info(f"Round {m}: selected {stats.selected} samples, mean top score {stats.mean_top_score:.4f}")
        if on_round is not None:
            on_round(stats)

        if report.selected_count == 0:
            stop_reason = StopReason.NO_HARD_SAMPLES
            break
        if report.selected_count < cfg.min_hard_set:
            stop_reason = StopReason.BELOW_MIN_HARD_SET
            break
        if m == cfg.max_models:
            stop_reason = StopReason.MAX_MODELS
            break

        model = warm_start(model)
        current = build_next_training_set(report, train_set, cfg)
        epochs = cfg.epochs_rest
        source = report

    if stop_reason is not StopReason.NO_HARD_SAMPLES:
        logger.warning(f"Stopped after {len(models)} models: {stop_reason.value}")
    return Ensemble(models, provenance, reports, train_set.vocab, cfg, seed, stop_reason)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusedPrediction:
    """
    Fused decision for one sample.

    Attributes:
        sample_id: Sample identifier
        label: Winning class index
        model_index: 0-based index of the winning member
        score: Winning score
    """
    sample_id: str
    label: int
    model_index: int
    score: float


def _stack(per_model_scores: Sequence[ScoreMatrix]) -> np.ndarray:
    """N×M×K array of aligned member scores."""
    if not per_model_scores:
        raise InputError("Fusion needs at least one score matrix")
    first = per_model_scores[0]
    for m, scores in enumerate(per_model_scores[1:], start=2):
        if scores.sample_ids != first.sample_ids:
            position = next(
                (i for i, (a, b) in enumerate(zip(first.sample_ids, scores.sample_ids)) if a != b),
                min(len(first), len(scores)),
            )
            raise InputError(f"Score matrix of model {m} is misaligned with model 1",
                             {"position": position, "model": m})
        if scores.num_classes != first.num_classes:
            raise ShapeError("Score matrices differ in class count", dimension="num_classes",
                             expected=first.num_classes, actual=scores.num_classes)
    return np.stack([s.rows for s in per_model_scores], axis=1)


def _winners(stacked: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, _, k = stacked.shape
    # argmax over the flattened (model, class) grid returns the first maximum,
    # which is the lowest model index and then the lowest class index
    flat = np.argmax(stacked.reshape(n, -1), axis=1) if n else np.zeros(0, dtype=np.int64)
    return flat // k, flat % k


def fuse_predict(per_model_scores: Sequence[ScoreMatrix]) -> List[FusedPrediction]:
    """
    Joint maximum over members and classes for every sample.

    Ties go to the lower member index, then the lower class index.

    Args:
        per_model_scores: Member score matrices over the same ids

    Returns:
        One FusedPrediction per sample, in score order

    Raises:
        InputError: If matrices are missing or misaligned
    """
    stacked = _stack(per_model_scores)
    models, classes = _winners(stacked)
    ids = per_model_scores[0].sample_ids
    return [
        FusedPrediction(sid, int(classes[i]), int(models[i]), float(stacked[i, models[i], classes[i]]))
        for i, sid in enumerate(ids)
    ]


def fuse_scores(per_model_scores: Sequence[ScoreMatrix]) -> ScoreMatrix:
    """Each sample's full row taken from its winning member."""
    stacked = _stack(per_model_scores)
    models, _ = _winners(stacked)
    rows = stacked[np.arange(stacked.shape[0]), models]
    return ScoreMatrix(per_model_scores[0].sample_ids, rows)


# ---------------------------------------------------------------------------
# Ensemble directory
# ---------------------------------------------------------------------------

def ensemble_document(ensemble: Ensemble) -> Dict[str, Any]:
    """JSON-ready description of an ensemble (everything except weights)."""
    members = []
    for m, prov in enumerate(ensemble.provenance, start=1):
        members.append({
            "file": MODEL_FILE_PATTERN.format(index=m),
            "epochs": prov.epochs,
            "train_size": len(prov.train_ids),
            "train_ids": list(prov.train_ids),
            "train_report": prov.train_report.to_dict() if prov.train_report else None,
        })
    rounds = []
    for stats, report in zip(ensemble.rounds, ensemble.reports):
        rounds.append({**stats.to_dict(), "report": report.to_dict()})
    return {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "vocab": {"codes": list(ensemble.vocab.codes), "names": list(ensemble.vocab.names)},
        "config": ensemble.config.model_dump(mode="json"),
        "model_config": ensemble.models[0].config.model_dump(mode="json"),
        "seed": ensemble.seed,
        "stop_reason": ensemble.stop_reason.value if ensemble.stop_reason else None,
        "members": members,
        "rounds": rounds,
    }


def save_ensemble(
    ensemble: Ensemble, directory: Union[str, Path], tracker: Optional["ArtifactTracker"] = None
) -> Path:
    """
    Write model_001.mcnn, model_002.mcnn, ... and ensemble.json.

    Args:
        ensemble: Ensemble to save
        directory: Destination directory
        tracker: Optional artifact tracker recording every write

    Returns:
        Path of ensemble.json

    Raises:
        ArtifactError: If a file cannot be written
    """
    target = Path(directory)
    for m, model in enumerate(ensemble.models, start=1):
        save_model(model, target / MODEL_FILE_PATTERN.format(index=m), tracker)
    text = json.dumps(ensemble_document(ensemble), indent=2) + "\n"
    manifest = target / ENSEMBLE_JSON
    if tracker is not None:
        tracker.write_text(manifest, text)
    else:
        try:
            manifest.write_text(text, encoding="utf-8")
        except OSError as e:
            raise ArtifactError(f"Cannot write {manifest}: {e}", artifact=str(manifest)) from e
    logger.info(f"Saved ensemble of {len(ensemble)} models to {target}")
    return manifest


def load_ensemble(directory: Union[str, Path]) -> Ensemble:
    """
    Read an ensemble directory written by save_ensemble.

    Raises:
        EnsembleFormatError: If ensemble.json is missing or inconsistent
        ModelFormatError: If a member file cannot be decoded
    """
    root = Path(directory)
    path = root / ENSEMBLE_JSON
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise EnsembleFormatError(f"No {ENSEMBLE_JSON} in {root}", path=str(root)) from e
    except (OSError, json.JSONDecodeError) as e:
        raise EnsembleFormatError(f"Cannot read {path}: {e}", path=str(path)) from e

    try:
        if document["format_version"] != ENSEMBLE_FORMAT_VERSION:
            raise EnsembleFormatError(
                f"Unsupported ensemble format version {document['format_version']}", path=str(path)
            )
        vocab = ClassVocab(tuple(document["vocab"]["codes"]), tuple(document["vocab"]["names"]))
        config = EnsembleConfig.model_validate(document["config"])
        stop_reason = StopReason(document["stop_reason"]) if document["stop_reason"] else None
        members = document["members"]
        reports = [SelectionReport.from_dict(r["report"]) for r in document["rounds"]]
        seed = int(document["seed"])
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise EnsembleFormatError(f"Malformed {ENSEMBLE_JSON}: {e}", path=str(path)) from e

    if not members:
        raise EnsembleFormatError("Ensemble lists no members", path=str(path))
    if len(reports) != len(members):
        raise EnsembleFormatError("Ensemble rounds do not match its members", path=str(path),
                                  context={"members": len(members), "rounds": len(reports)})

    models: List[Model] = []
    provenance: List[MemberProvenance] = []
    for m, member in enumerate(members, start=1):
        try:
            file_name = str(member["file"])
            train_ids = tuple(str(i) for i in member["train_ids"])
            epochs = int(member["epochs"])
            tr = member.get("train_report")
            train_report = (
                TrainReport(int(tr["epochs_run"]), tuple(float(v) for v in tr["epoch_losses"]),
                            float(tr["train_accuracy"]))
                if tr else None
            )
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise EnsembleFormatError(f"Malformed member {m} in {ENSEMBLE_JSON}: {e!r}", path=str(path)) from e
        model_path = root / file_name
        if not model_path.is_file():
            raise EnsembleFormatError(f"Missing member file {file_name}", path=str(model_path))
        model = load_model(model_path)
        if model.config.num_classes != vocab.num_classes:
            raise EnsembleFormatError("Member class count does not match the vocabulary",
                                      path=str(model_path))
        models.append(model)
        provenance.append(MemberProvenance(train_ids, epochs, reports[m - 2] if m > 1 else None, train_report))
    logger.info(f"Loaded ensemble of {len(models)} models from {root}")
    return Ensemble(models, provenance, reports, vocab, config, seed, stop_reason)

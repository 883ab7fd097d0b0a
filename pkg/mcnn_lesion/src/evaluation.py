#!/usr/bin/env python3
"""
ROC evaluation for mcnn-lesion.

This module computes one-vs-rest ROC curves and AUC per class (trapezoid
over the tie-grouped threshold sweep, cross-checked by the Mann–Whitney
rank statistic), summary metrics over a score matrix, member-versus-fused
comparisons, and the CSV and SVG exports of the curves.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import rankdata  # noqa: E402

from .additive_ensemble import fuse_scores  # noqa: E402
from .exceptions import ArtifactError, InputError, UndefinedCurveError  # noqa: E402
from .models import ClassVocab, LabelVector, ScoreMatrix, check_aligned  # noqa: E402

if TYPE_CHECKING:
    from .artifacts import ArtifactTracker

# Configure logging
logger = logging.getLogger("mcnn-lesion.evaluation")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class RocCurve:
    """
    One-vs-rest ROC curve of one class.

    Attributes:
        class_index: Positive class
        points: (threshold, fpr, tpr) by decreasing threshold, starting at
            (+inf, 0, 0) and ending at (1, 1)
        auc: Area under the curve
    """
    class_index: int
    points: Tuple[Tuple[float, float, float], ...]
    auc: float

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


def _class_code(vocab: Optional[ClassVocab], class_index: int) -> Optional[str]:
    if vocab is not None and 0 <= class_index < vocab.num_classes:
        return vocab.codes[class_index]
    return None


def _binary_target(
    labels: LabelVector, class_index: int, vocab: Optional[ClassVocab]
) -> Tuple[np.ndarray, int, int]:
    positive = np.asarray(labels.classes) == class_index
    p = int(positive.sum())
    n = int(positive.size - p)
    if p == 0 or n == 0:
        code = _class_code(vocab, class_index)
        which = "positives" if p == 0 else "negatives"
        raise UndefinedCurveError(
            f"ROC curve of class {code or class_index} is undefined: no {which}",
            class_index=class_index, class_code=code,
        )
    return positive, p, n


def roc_curve(
    scores: ScoreMatrix,
    labels: LabelVector,
    class_index: int,
    vocab: Optional[ClassVocab] = None,
) -> RocCurve:
    """
    One-vs-rest ROC curve of a class.

    The threshold sweeps the distinct values of the class column from high
    to low; all samples sharing a score cross together. The AUC is the
    trapezoid area, accumulated with integer numerators so that it is
    exactly the Mann–Whitney statistic.

    Args:
        scores: Score matrix
        labels: True classes aligned with scores
        class_index: Positive class
        vocab: Optional vocabulary for error messages

    Returns:
        RocCurve

    Raises:
        UndefinedCurveError: If the class has no positives or no negatives
        InputError: If scores and labels are misaligned
    """
    check_aligned(scores, labels)
    if not 0 <= class_index < scores.num_classes:
        raise InputError(f"Class index {class_index} out of range", {"classes": scores.num_classes})
    positive, p, n = _binary_target(labels, class_index, vocab)
    column = scores.column(class_index)

    thresholds = np.unique(column)[::-1]
    pos_sorted = np.sort(column[positive])
    neg_sorted = np.sort(column[~positive])
    tp = p - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = n - np.searchsorted(neg_sorted, thresholds, side="left")

    tp = np.concatenate(([0], tp)).astype(np.int64)
    fp = np.concatenate(([0], fp)).astype(np.int64)
    # twice the area, in units of 1/(P·N)
    doubled = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = doubled / (2 * p * n)

    points = ((math.inf, 0.0, 0.0),) + tuple(
        (float(t), int(f) / n, int(v) / p) for t, f, v in zip(thresholds, fp[1:], tp[1:])
    )
    return RocCurve(class_index, points, auc)


def _rank_auc(values: np.ndarray, positive: np.ndarray) -> float:
    p = int(positive.sum())
    n = int(positive.size - p)
    ranks = rankdata(values, method="average")
    # 2·R_pos is an integer even with midranks
    doubled_rank_sum = int(round(2.0 * float(np.sum(ranks[positive], dtype=np.float64))))
    return (doubled_rank_sum - p * (p + 1)) / (2 * p * n)


def auc_mann_whitney(
    column: Sequence[float],
    labels: LabelVector,
    class_index: int,
    vocab: Optional[ClassVocab] = None,
) -> float:
    """
    AUC as the Mann–Whitney probability that a positive outranks a negative.

    Ties count one half. Uses midranks: (R_pos − P(P+1)/2) / (P·N).

    Args:
        column: Scores of one class, aligned with labels
        labels: True classes
        class_index: Positive class

    Returns:
        AUC in [0,1]

    Raises:
        UndefinedCurveError: If the class has no positives or no negatives
    """
    values = np.asarray(column, dtype=np.float64)
    if values.shape != (len(labels.sample_ids),):
        raise InputError("Score column and labels differ in length",
                         {"scores": values.shape, "labels": len(labels.sample_ids)})
    positive, _, _ = _binary_target(labels, class_index, vocab)
    return _rank_auc(values, positive)


@dataclass
class EvalSummary:
    """
    Metrics of one score matrix against its labels.

    Attributes:
        class_codes: Column codes
        per_class_auc: One-vs-rest AUC per class (None when skipped)
        macro_auc: Mean over computable classes (None if none)
        micro_auc: AUC over all flattened (sample, class) pairs
        accuracy: Top-1 accuracy
        error_rate: 1 − accuracy
        confusion: K×K counts, rows = true class, columns = predicted
        skipped: Class code → reason for classes without a curve
        sample_count: Number of evaluated samples
        curves: ROC curves of the computable classes
    """
    class_codes: Tuple[str, ...]
    per_class_auc: List[Optional[float]]
    macro_auc: Optional[float]
    micro_auc: float
    accuracy: float
    error_rate: float
    confusion: np.ndarray
    skipped: Dict[str, str]
    sample_count: int
    curves: List[RocCurve] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sample_count": self.sample_count,
            "class_codes": list(self.class_codes),
            "per_class_auc": {c: a for c, a in zip(self.class_codes, self.per_class_auc)},
            "macro_auc": self.macro_auc,
            "micro_auc": self.micro_auc,
            "accuracy": self.accuracy,
            "error_rate": self.error_rate,
            "confusion": self.confusion.tolist(),
            "skipped": dict(self.skipped),
        }


def evaluate(
    scores: ScoreMatrix, labels: LabelVector, vocab: Optional[ClassVocab] = None
) -> EvalSummary:
    """
    Per-class and summary metrics.

    Classes without positives or negatives in the data are skipped and
    recorded with the reason.

    Args:
        scores: Score matrix, K ≥ 2
        labels: True classes aligned with scores
        vocab: Class vocabulary (default: ISIC order when K = 7, else the
            column indices)

    Returns:
        EvalSummary

    Raises:
        InputError: If the input is empty or misaligned
    """
    check_aligned(scores, labels)
    if len(scores) == 0:
        raise InputError("Cannot evaluate an empty score matrix")
    k = scores.num_classes
    if k < 2:
        raise InputError("Evaluation needs at least two classes", {"classes": k})
    if vocab is None:
        vocab = ClassVocab() if k == ClassVocab().num_classes else ClassVocab.from_codes(
            [str(i) for i in range(k)]
        )
    if vocab.num_classes != k:
        raise InputError("Vocabulary size does not match the score matrix",
                         {"vocab": vocab.num_classes, "classes": k})
    truth = np.asarray(labels.classes, dtype=np.int64)
    if truth.min() < 0 or truth.max() >= k:
        raise InputError("Label class index out of range", {"classes": k})

    per_class: List[Optional[float]] = []
    curves: List[RocCurve] = []
    skipped: Dict[str, str] = {}
    for c in range(k):
        try:
            curve = roc_curve(scores, labels, c, vocab)
        except UndefinedCurveError as e:
            skipped[vocab.codes[c]] = e.message
            per_class.append(None)
            logger.warning(f"Skipping class {vocab.codes[c]}: {e.message}")
            continue
        curves.append(curve)
        per_class.append(curve.auc)

    computable = [a for a in per_class if a is not None]
    macro = float(np.mean(computable)) if computable else None

    indicator = np.zeros(scores.rows.shape, dtype=bool)
    indicator[np.arange(len(truth)), truth] = True
    micro = _rank_auc(scores.rows.ravel(), indicator.ravel())

    predicted = np.argmax(scores.rows, axis=1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth, predicted), 1)
    accuracy = float(np.trace(confusion)) / len(truth)

    return EvalSummary(
        class_codes=vocab.codes,
        per_class_auc=per_class,
        macro_auc=macro,
        micro_auc=micro,
        accuracy=accuracy,
        error_rate=1.0 - accuracy,
        confusion=confusion,
        skipped=skipped,
        sample_count=len(truth),
        curves=curves,
    )


@dataclass
class MemberComparison:
    """Evaluation of every ensemble member and of the fused scores."""
    members: List[EvalSummary]
    fused: EvalSummary

    def to_dict(self) -> Dict[str, Any]:
        return {
            "members": [m.to_dict() for m in self.members],
            "fused": self.fused.to_dict(),
        }


def compare_members(
    per_model_scores: Sequence[ScoreMatrix],
    labels: LabelVector,
    vocab: Optional[ClassVocab] = None,
) -> MemberComparison:
    """
    Evaluate each member alone and the fused ensemble.

    Args:
        per_model_scores: Member score matrices over the same ids
        labels: True classes
        vocab: Class vocabulary

    Returns:
        MemberComparison
    """
    members = [evaluate(s, labels, vocab) for s in per_model_scores]
    fused = evaluate(fuse_scores(per_model_scores), labels, vocab)
    return MemberComparison(members, fused)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def encode_roc_csv(curve: RocCurve) -> str:
    """`threshold,fpr,tpr` CSV text of a curve."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for threshold, fpr, tpr in curve.points:
        writer.writerow([repr(threshold), repr(fpr), repr(tpr)])
    return buffer.getvalue()


def _write_text(path: PathLike, text: str, tracker: Optional["ArtifactTracker"]) -> Path:
    if tracker is not None:
        return tracker.write_text(path, text)
    target = Path(path)
    try:
        target.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Cannot write {target}: {e}", artifact=str(target)) from e
    return target


def export_roc_csv(curve: RocCurve, path: PathLike, tracker: Optional["ArtifactTracker"] = None) -> Path:
    """Write a curve as CSV (see encode_roc_csv)."""
    return _write_text(path, encode_roc_csv(curve), tracker)


def render_roc_svg(
    curves: Sequence[RocCurve], vocab: ClassVocab, title: Optional[str] = None
) -> str:
    """
    Static SVG figure of ROC curves on [0,1]², AUC in the legend.

    The output is byte-stable: no timestamp, fixed element ids.
    """
    with plt.rc_context({"svg.hashsalt": "mcnn-lesion", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 6))
        try:
            for curve in curves:
                code = vocab.codes[curve.class_index]
                ax.plot(curve.fpr, curve.tpr, linewidth=1.5, label=f"{code} (AUC = {curve.auc:.3f})")
            ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
            ax.set_xlim(0.0, 1.0)
            ax.set_ylim(0.0, 1.0)
            ax.set_xlabel("False positive rate")
            ax.set_ylabel("True positive rate")
            ax.set_title(title or "One-vs-rest ROC")
            ax.legend(loc="lower right", fontsize="small")
            buffer = io.StringIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buffer.getvalue()


def export_roc_svg(
    curves: Sequence[RocCurve],
    path: PathLike,
    vocab: ClassVocab,
    title: Optional[str] = None,
    tracker: Optional["ArtifactTracker"] = None,
) -> Path:
    """Write the ROC figure (see render_roc_svg)."""
    return _write_text(path, render_roc_svg(curves, vocab, title), tracker)

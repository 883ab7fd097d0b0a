"""
Tests for ROC curves, AUC and the evaluation summary.
"""
import csv
import io
import math
from typing import Sequence

import numpy as np
import pytest

from mcnn_lesion.src.evaluation import (
    auc_mann_whitney,
    compare_members,
    encode_roc_csv,
    evaluate,
    render_roc_svg,
    roc_curve,
)
from mcnn_lesion.src.exceptions import InputError, UndefinedCurveError
from mcnn_lesion.src.models import ClassVocab, LabelVector, ScoreMatrix


def binary_case(positive_scores: Sequence[float], negative_scores: Sequence[float]):
    """Two-class score matrix where column 1 carries the given scores."""
    column = np.array(list(positive_scores) + list(negative_scores), dtype=np.float64)
    classes = np.array([1] * len(positive_scores) + [0] * len(negative_scores))
    ids = tuple(f"s{i}" for i in range(len(column)))
    scores = ScoreMatrix(ids, np.column_stack([1.0 - column, column]))
    return scores, LabelVector(ids, classes)


def _labels(classes: Sequence[int]) -> LabelVector:
    return LabelVector(tuple(f"s{i}" for i in range(len(classes))), np.asarray(classes))


def _random_matrix(rng: np.random.Generator, n: int, k: int) -> ScoreMatrix:
    raw = rng.random((n, k))
    return ScoreMatrix(tuple(f"s{i}" for i in range(n)), raw / raw.sum(axis=1, keepdims=True))


def _trapezoid(fpr: Sequence[float], tpr: Sequence[float]) -> float:
    return sum((fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2 for i in range(1, len(fpr)))


# ---------------------------------------------------------------------------
# roc_curve / auc_mann_whitney
# ---------------------------------------------------------------------------

def test_perfect_separation():
    scores, labels = binary_case([0.9] * 4, [0.1] * 6)
    curve = roc_curve(scores, labels, 1)
    assert curve.auc == 1.0
    assert curve.points[0] == (math.inf, 0.0, 0.0)
    assert curve.points[-1][1:] == (1.0, 1.0)


def test_reversed_scores():
    scores, labels = binary_case([0.1] * 4, [0.9] * 6)
    assert roc_curve(scores, labels, 1).auc == 0.0


def test_single_tie_group():
    scores, labels = binary_case([0.5] * 3, [0.5] * 5)
    curve = roc_curve(scores, labels, 1)
    assert [p[1:] for p in curve.points] == [(0.0, 0.0), (1.0, 1.0)]
    assert curve.auc == 0.5


def test_tie_group_is_one_diagonal_step():
    scores, labels = binary_case([0.8, 0.4], [0.4, 0.1])
    curve = roc_curve(scores, labels, 1)
    assert [p[1:] for p in curve.points] == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]
    assert curve.auc == pytest.approx(0.875)


@pytest.mark.parametrize("pos,neg,expected", [
    ([0.8], [0.2], 1.0),
    ([0.5], [0.5], 0.5),
    ([0.2], [0.8], 0.0),
    ([0.9, 0.3], [0.5, 0.1], 0.75),
])
def test_mann_whitney_examples(pos, neg, expected):
    _, labels = binary_case(pos, neg)
    assert auc_mann_whitney(pos + neg, labels, 1) == expected


def test_trapezoid_equals_rank_statistic():
    """1000 random cases, every tenth with heavy ties."""
    for seed in range(1000):
        _check_trapezoid_case(seed)


def _check_trapezoid_case(seed: int) -> None:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    classes = rng.integers(0, 2, n)
    classes[0], classes[1] = 0, 1
    if seed % 10 == 0:
        column = rng.integers(0, 3, n) / 2.0
    else:
        column = rng.random(n)
    scores = ScoreMatrix(tuple(f"s{i}" for i in range(n)), np.column_stack([1.0 - column, column]))
    labels = _labels(classes)
    curve = roc_curve(scores, labels, 1)
    assert curve.auc == auc_mann_whitney(column, labels, 1)
    assert abs(curve.auc - _trapezoid(curve.fpr, curve.tpr)) <= 1e-12


def test_curve_is_monotone_with_fixed_endpoints():
    rng = np.random.default_rng(0)
    scores = _random_matrix(rng, 200, 7)
    labels = _labels(rng.integers(0, 7, 200))
    for c in range(7):
        curve = roc_curve(scores, labels, c)
        assert curve.points[0][1:] == (0.0, 0.0)
        assert curve.points[-1][1:] == (1.0, 1.0)
        assert np.all(np.diff(curve.fpr) >= 0)
        assert np.all(np.diff(curve.tpr) >= 0)
        assert 0.0 <= curve.auc <= 1.0
        thresholds = [p[0] for p in curve.points]
        assert thresholds == sorted(thresholds, reverse=True)


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    column = rng.random(80)
    classes = rng.integers(0, 2, 80)
    labels = _labels(classes)
    ids = labels.sample_ids
    plain = ScoreMatrix(ids, np.column_stack([1.0 - column, column]))
    squared = ScoreMatrix(ids, np.column_stack([1.0 - column ** 2, column ** 2]))
    assert roc_curve(plain, labels, 1).auc == roc_curve(squared, labels, 1).auc


def test_complement_labels_complement_auc():
    rng = np.random.default_rng(2)
    column = rng.random(50)
    classes = rng.integers(0, 2, 50)
    labels = _labels(classes)
    scores = ScoreMatrix(labels.sample_ids, np.column_stack([1.0 - column, column]))
    flipped = _labels(1 - classes)
    assert roc_curve(scores, labels, 1).auc + roc_curve(scores, flipped, 1).auc == pytest.approx(1.0, abs=1e-12)


def test_undefined_curve():
    scores = ScoreMatrix(("a", "b"), np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1]]))
    labels = LabelVector(("a", "b"), np.array([0, 0]))
    with pytest.raises(UndefinedCurveError) as exc_info:
        roc_curve(scores, labels, 2)
    assert exc_info.value.context["class_index"] == 2
    with pytest.raises(UndefinedCurveError):
        roc_curve(scores, labels, 0)


def test_roc_rejects_misaligned_labels():
    scores, labels = binary_case([0.9], [0.1])
    with pytest.raises(InputError):
        roc_curve(scores, LabelVector(labels.sample_ids[::-1], labels.classes), 1)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_perfect_classifier():
    classes = [0, 1, 2, 3, 4, 5, 6, 0, 1, 2]
    labels = _labels(classes)
    scores = ScoreMatrix(labels.sample_ids, np.eye(7)[classes])
    summary = evaluate(scores, labels)
    assert summary.accuracy == 1.0
    assert summary.error_rate == 0.0
    assert summary.per_class_auc == [1.0] * 7
    assert summary.macro_auc == 1.0
    assert summary.micro_auc == 1.0
    assert np.array_equal(summary.confusion, np.diag(np.bincount(classes, minlength=7)))
    assert summary.class_codes == ClassVocab().codes


def test_evaluate_uniform_scores():
    labels = _labels(list(range(7)) * 3)
    scores = ScoreMatrix(labels.sample_ids, np.full((21, 7), 1 / 7))
    summary = evaluate(scores, labels)
    assert summary.per_class_auc == [0.5] * 7
    assert summary.macro_auc == 0.5
    assert summary.micro_auc == 0.5


def test_evaluate_counting_oracle():
    rng = np.random.default_rng(9)
    scores = _random_matrix(rng, 300, 7)
    classes = rng.integers(0, 7, 300)
    summary = evaluate(scores, _labels(classes))

    predicted = [max(range(7), key=lambda j: (row[j], -j)) for row in scores.rows]
    correct = sum(int(p == t) for p, t in zip(predicted, classes))
    assert summary.accuracy == correct / 300
    assert summary.error_rate == pytest.approx(1 - correct / 300)
    assert list(summary.confusion.sum(axis=1)) == list(np.bincount(classes, minlength=7))
    assert summary.confusion.sum() == 300
    assert summary.macro_auc == pytest.approx(np.mean(summary.per_class_auc))


def test_evaluate_skips_absent_class():
    rng = np.random.default_rng(10)
    scores = _random_matrix(rng, 40, 7)
    classes = rng.integers(0, 6, 40)
    summary = evaluate(scores, _labels(classes))
    assert summary.per_class_auc[6] is None
    assert "VASC" in summary.skipped
    present = [a for a in summary.per_class_auc if a is not None]
    assert summary.macro_auc == pytest.approx(np.mean(present))
    assert len(summary.curves) == len(present)
    assert summary.to_dict()["per_class_auc"]["VASC"] is None


def test_micro_auc_is_flattened_rank_statistic():
    rng = np.random.default_rng(11)
    scores = _random_matrix(rng, 60, 4)
    classes = rng.integers(0, 4, 60)
    summary = evaluate(scores, _labels(classes))

    flat = scores.rows.ravel()
    indicator = np.zeros((60, 4), dtype=int)
    indicator[np.arange(60), classes] = 1
    pos = flat[indicator.ravel() == 1]
    neg = flat[indicator.ravel() == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    assert summary.micro_auc == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)


def test_evaluate_rejects_empty():
    with pytest.raises(InputError):
        evaluate(ScoreMatrix((), np.zeros((0, 7))), LabelVector((), np.zeros(0, dtype=int)))


def test_compare_members():
    labels = _labels([0, 1, 0, 1])
    good = ScoreMatrix(labels.sample_ids, np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.4, 0.6]]))
    bad = ScoreMatrix(labels.sample_ids, np.array([[0.45, 0.55], [0.55, 0.45], [0.5, 0.5], [0.5, 0.5]]))
    vocab = ClassVocab.from_codes(["A", "B"])
    comparison = compare_members([good, bad], labels, vocab)
    assert len(comparison.members) == 2
    assert comparison.members[0].accuracy == 1.0
    assert comparison.fused.accuracy == 1.0
    assert set(comparison.to_dict()) == {"members", "fused"}


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def test_roc_csv_reintegrates_to_auc():
    rng = np.random.default_rng(12)
    scores = _random_matrix(rng, 120, 7)
    labels = _labels(rng.integers(0, 7, 120))
    for c in range(7):
        curve = roc_curve(scores, labels, c)
        rows = list(csv.reader(io.StringIO(encode_roc_csv(curve))))
        assert rows[0] == ["threshold", "fpr", "tpr"]
        assert rows[1][0] == "inf"
        fpr = [float(r[1]) for r in rows[1:]]
        tpr = [float(r[2]) for r in rows[1:]]
        assert [float(r[0]) for r in rows[1:]][0] == float("inf")
        assert abs(_trapezoid(fpr, tpr) - curve.auc) <= 1e-9


def test_svg_is_byte_stable():
    rng = np.random.default_rng(13)
    scores = _random_matrix(rng, 50, 7)
    labels = _labels(list(range(7)) * 7 + [0])
    curves = [roc_curve(scores, labels, c) for c in range(7)]
    first = render_roc_svg(curves, ClassVocab())
    second = render_roc_svg(curves, ClassVocab())
    assert first == second
    assert first.lstrip().startswith("<?xml")
    assert "<svg" in first

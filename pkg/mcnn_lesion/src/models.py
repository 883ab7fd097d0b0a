#!/usr/bin/env python3
"""
Data models for mcnn-lesion.

This module contains the data models and enums shared by the data loaders,
the classifier, the ensemble and the evaluation code: the class vocabulary,
samples and datasets, label vectors and probability score matrices.
"""

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .constants import DEFAULT_CLASS_CODES, DEFAULT_CLASS_NAMES, ROW_SUM_TOLERANCE
from .exceptions import InputError, ShapeError


class SelectionPredicate(str, Enum):
    """Which samples a trained model hands on to its successor."""
    SCORE_ONLY = "score_only"
    SCORE_OR_WRONG = "score_or_wrong"


class NextSetMode(str, Enum):
    """How the successor's training set is assembled from the selection."""
    HARD_ONLY = "hard_only"
    FULL_PLUS_DUPLICATES = "full_plus_duplicates"


class StopReason(str, Enum):
    """Why the additive training loop stopped adding models."""
    NO_HARD_SAMPLES = "no_hard_samples"
    BELOW_MIN_HARD_SET = "below_min_hard_set"
    MAX_MODELS = "max_models"


@dataclass(frozen=True)
class ClassVocab:
    """
    Ordered lesion class vocabulary.

    Attributes:
        codes: Class codes in column order (e.g. MEL, NV, ...)
        names: Human-readable display names, aligned with codes
    """
    codes: Tuple[str, ...] = DEFAULT_CLASS_CODES
    names: Tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self) -> None:
        if len(set(self.codes)) != len(self.codes):
            raise InputError("Class codes must be unique", {"codes": list(self.codes)})
        if len(self.codes) < 2:
            raise InputError("A vocabulary needs at least two classes")
        if len(self.names) != len(self.codes):
            raise InputError(
                "Class names must align with class codes",
                {"codes": len(self.codes), "names": len(self.names)},
            )

    @classmethod
    def from_codes(cls, codes: Sequence[str]) -> "ClassVocab":
        """
        Build a vocabulary from codes, reusing default display names.

        Args:
            codes: Class codes in column order

        Returns:
            ClassVocab with names looked up from the default vocabulary
        """
        defaults = dict(zip(DEFAULT_CLASS_CODES, DEFAULT_CLASS_NAMES))
        return cls(tuple(codes), tuple(defaults.get(code, code) for code in codes))

    @property
    def num_classes(self) -> int:
        return len(self.codes)

    def index(self, code: str) -> int:
        """Column index of a class code."""
        try:
            return self.codes.index(code)
        except ValueError as e:
            raise InputError(f"Unknown class code: {code}", {"codes": list(self.codes)}) from e


@dataclass(frozen=True, eq=False)
class Sample:
    """
    One labelled image.

    Attributes:
        id: Stable sample identifier
        image: C×H×W float32 tensor with values in [0,1]
        label: One-hot float32 vector over the vocabulary, or None when the
            manifest carries no labels
    """
    id: str
    image: np.ndarray
    label: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.image.ndim != 3:
            raise ShapeError(
                f"Sample {self.id} image must be C×H×W",
                dimension="rank", expected=3, actual=self.image.ndim,
            )
        if self.image.size and (self.image.min() < 0.0 or self.image.max() > 1.0):
            raise InputError(f"Sample {self.id} has pixel values outside [0,1]")
        if self.label is not None:
            ones = int(np.count_nonzero(self.label == 1.0))
            zeros = int(np.count_nonzero(self.label == 0.0))
            if ones != 1 or ones + zeros != self.label.size:
                raise InputError(f"Sample {self.id} label is not one-hot")

    @property
    def class_index(self) -> int:
        if self.label is None:
            raise InputError(f"Sample {self.id} has no label")
        return int(np.argmax(self.label))


def one_hot(class_index: int, num_classes: int) -> np.ndarray:
    """One-hot float32 vector with a 1 at class_index."""
    vec = np.zeros(num_classes, dtype=np.float32)
    vec[class_index] = 1.0
    return vec


@dataclass(frozen=True, eq=False)
class LabelVector:
    """
    True class indices aligned with an ordered list of sample ids.
    """
    sample_ids: Tuple[str, ...]
    classes: np.ndarray

    def __post_init__(self) -> None:
        if len(self.sample_ids) != len(self.classes):
            raise ShapeError(
                "Label vector ids and classes differ in length",
                dimension="samples", expected=len(self.sample_ids),
                actual=len(self.classes),
            )


@dataclass
class Dataset:
    """
    Ordered multiset of sample ids referencing a sample store.

    The same id may appear more than once (duplicated hard samples); the
    store holds each sample exactly once.

    Attributes:
        store: Mapping from sample id to Sample
        ids: Ordered sample ids, duplicates allowed
        vocab: Class vocabulary the labels refer to
    """
    store: Mapping[str, Sample]
    ids: Tuple[str, ...]
    vocab: ClassVocab = field(default_factory=ClassVocab)

    def __post_init__(self) -> None:
        self.ids = tuple(self.ids)
        missing = [sid for sid in self.ids if sid not in self.store]
        if missing:
            raise InputError(
                "Dataset references ids missing from its sample store",
                {"missing": missing[:10]},
            )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], vocab: Optional[ClassVocab] = None) -> "Dataset":
        """
        Build a dataset whose order is the order of the given samples.

        Args:
            samples: Samples with unique ids
            vocab: Class vocabulary (default ISIC order)

        Returns:
            Dataset over a fresh store
        """
        store: Dict[str, Sample] = {}
        for sample in samples:
            if sample.id in store:
                raise InputError(f"Duplicate sample id: {sample.id}")
            store[sample.id] = sample
        return cls(store, tuple(s.id for s in samples), vocab or ClassVocab())

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Sample]:
        return (self.store[sid] for sid in self.ids)

    def subset(self, ids: Sequence[str]) -> "Dataset":
        """Dataset over the same store with a new id multiset."""
        return Dataset(self.store, tuple(ids), self.vocab)

    def unique_ids(self) -> Tuple[str, ...]:
        """Ids in first-occurrence order without duplicates."""
        return tuple(dict.fromkeys(self.ids))

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        if not self.ids:
            raise InputError("Empty dataset has no image shape")
        return tuple(self.store[self.ids[0]].image.shape)  # type: ignore[return-value]

    @property
    def has_labels(self) -> bool:
        return all(self.store[sid].label is not None for sid in self.ids)

    def images(self) -> np.ndarray:
        """Stacked N×C×H×W float32 images in dataset order."""
        if not self.ids:
            raise InputError("Empty dataset has no images")
        return np.stack([self.store[sid].image for sid in self.ids]).astype(np.float32)

    def one_hot_labels(self) -> np.ndarray:
        """Stacked N×K one-hot labels in dataset order."""
        if not self.has_labels:
            raise InputError("Dataset has unlabelled samples")
        return np.stack([self.store[sid].label for sid in self.ids]).astype(np.float32)

    def label_vector(self) -> LabelVector:
        """True class indices in dataset order."""
        classes = np.array([self.store[sid].class_index for sid in self.ids], dtype=np.int64)
        return LabelVector(self.ids, classes)

    def class_counts(self) -> Dict[str, int]:
        """Number of samples per class code, in vocabulary order."""
        counts = Counter(self.store[sid].class_index for sid in self.ids)
        return {code: counts.get(i, 0) for i, code in enumerate(self.vocab.codes)}


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """
    Per-sample, per-class probability rows.

    Attributes:
        sample_ids: Ordered sample ids, one per row
        rows: N×K float64 array; each row sums to 1 within 1e-6
    """
    sample_ids: Tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ShapeError("Score matrix must be N×K", dimension="rank", expected=2, actual=rows.ndim)
        if rows.shape[0] != len(self.sample_ids):
            raise ShapeError(
                "Score matrix row count differs from its sample ids",
                dimension="samples", expected=len(self.sample_ids), actual=rows.shape[0],
            )
        if rows.size:
            if not np.all(np.isfinite(rows)) or rows.min() < 0.0 or rows.max() > 1.0:
                raise InputError("Score matrix entries must be finite and in [0,1]")
            bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > ROW_SUM_TOLERANCE)
            if bad.size:
                raise InputError(
                    "Score matrix rows must sum to 1",
                    {"first_bad_row": int(bad[0]), "sample_id": self.sample_ids[int(bad[0])]},
                )
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "rows", rows)

    @property
    def num_classes(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.sample_ids)

    def column(self, class_index: int) -> np.ndarray:
        return self.rows[:, class_index]


def check_aligned(scores: ScoreMatrix, labels: LabelVector) -> None:
    """
    Verify scores and labels cover the same ids in the same order.

    Raises:
        InputError: On the first misaligned position
    """
    if len(scores.sample_ids) != len(labels.sample_ids):
        raise InputError(
            "Scores and labels cover different numbers of samples",
            {"scores": len(scores.sample_ids), "labels": len(labels.sample_ids)},
        )
    for position, (a, b) in enumerate(zip(scores.sample_ids, labels.sample_ids)):
        if a != b:
            raise InputError(
                "Scores and labels are misaligned",
                {"position": position, "score_id": a, "label_id": b},
            )


def ids_by_class(dataset: Dataset) -> List[List[str]]:
    """Dataset ids grouped by class index, dataset order kept within groups."""
    groups: List[List[str]] = [[] for _ in range(dataset.vocab.num_classes)]
    for sid in dataset.ids:
        groups[dataset.store[sid].class_index].append(sid)
    return groups

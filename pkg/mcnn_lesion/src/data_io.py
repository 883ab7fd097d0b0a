#!/usr/bin/env python3
"""
Dataset input and output for mcnn-lesion.

This module reads and writes binary netpbm images (P5 grayscale, P6 RGB)
and label manifests shaped like the ISIC task-3 ground-truth CSV, renders
the synthetic seven-class dataset and makes stratified splits.
"""

import csv
import io
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import SynthConfig
from .constants import IMAGES_DIR, PIXEL_MAXVAL
from .exceptions import (
    ArtifactError,
    ImageDecodeError,
    ImageSizeMismatchError,
    InputError,
    ManifestError,
    MaxvalError,
    ShapeError,
    UnsupportedImageFormatError,
)
from .models import ClassVocab, Dataset, Sample, ids_by_class, one_hot

if TYPE_CHECKING:
    from .artifacts import ArtifactTracker

# Configure logging
logger = logging.getLogger("mcnn-lesion.data")

PathLike = Union[str, Path]

_CHANNELS = {b"P5": 1, b"P6": 3}
_MAGIC = {1: b"P5", 3: b"P6"}
_TRUE_VALUES = {"1", "1.0"}
_FALSE_VALUES = {"0", "0.0"}


def _write(path: PathLike, data: bytes, tracker: Optional["ArtifactTracker"]) -> Path:
    if tracker is not None:
        return tracker.write_bytes(path, data)
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    except OSError as e:
        raise ArtifactError(f"Cannot write {target}: {e}", artifact=str(target)) from e
    return target


def scale_pixels(raw: np.ndarray) -> np.ndarray:
    """8-bit levels to float32 values in [0,1]."""
    return raw.astype(np.float32) / np.float32(PIXEL_MAXVAL)


# ---------------------------------------------------------------------------
# Netpbm images
# ---------------------------------------------------------------------------

def _header_tokens(data: bytes, path: str) -> Tuple[List[bytes], int]:
    """Read magic, width, height and maxval; return them and the raster offset."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageDecodeError("Image header ended early", path=path)
        tokens.append(data[start:pos])
        if len(tokens) == 1 and tokens[0] not in _CHANNELS:
            raise UnsupportedImageFormatError(
                f"Unsupported image magic {tokens[0]!r}, expected P5 or P6", path=path
            )
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageDecodeError("Image header is not followed by whitespace", path=path)
    return tokens, pos + 1


def decode_image(data: bytes, path: str = "<bytes>") -> np.ndarray:
    """
    Decode a binary PGM/PPM byte string.

    Returns:
        C×H×W float32 tensor with pixel/255

    Raises:
        UnsupportedImageFormatError: Magic is not P5 or P6
        MaxvalError: Maxval is not 255
        ImageSizeMismatchError: Raster length disagrees with the header
        ImageDecodeError: Malformed header
    """
    tokens, offset = _header_tokens(data, path)
    channels = _CHANNELS[tokens[0]]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise ImageDecodeError(f"Non-numeric image header field: {e}", path=path) from e
    if maxval != PIXEL_MAXVAL:
        raise MaxvalError(f"Unsupported maxval {maxval}, expected {PIXEL_MAXVAL}", path=path,
                          context={"maxval": maxval})
    if width < 1 or height < 1:
        raise ImageDecodeError(f"Invalid image size {width}×{height}", path=path)
    raster = data[offset:]
    expected = width * height * channels
    if len(raster) != expected:
        raise ImageSizeMismatchError(
            f"Raster has {len(raster)} bytes, header declares {expected}",
            path=path, context={"width": width, "height": height, "channels": channels},
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return scale_pixels(pixels.transpose(2, 0, 1))


def load_image(path: PathLike) -> np.ndarray:
    """
    Load a binary PGM (1 channel) or PPM (3 channels) image.

    Args:
        path: Image file

    Returns:
        C×H×W float32 tensor with values in [0,1]

    Raises:
        ImageDecodeError: Unreadable file or any decode failure
    """
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as e:
        raise ImageDecodeError(f"Cannot read image {target}: {e}", path=str(target)) from e
    return decode_image(data, str(target))


def encode_image(image: np.ndarray) -> bytes:
    """
    Encode a C×H×W tensor in [0,1] as binary PGM (C=1) or PPM (C=3).

    Values are rounded to the nearest 8-bit level.
    """
    if image.ndim != 3 or image.shape[0] not in _MAGIC:
        raise ShapeError("Only 1- or 3-channel C×H×W images can be written",
                         dimension="channels", expected="1 or 3", actual=image.shape)
    channels, height, width = image.shape
    levels = np.clip(np.round(image.astype(np.float64) * PIXEL_MAXVAL), 0, PIXEL_MAXVAL).astype(np.uint8)
    header = b"%s\n%d %d\n%d\n" % (_MAGIC[channels], width, height, PIXEL_MAXVAL)
    return header + levels.transpose(1, 2, 0).tobytes()


def write_image(path: PathLike, image: np.ndarray, tracker: Optional["ArtifactTracker"] = None) -> Path:
    """Write a tensor as a netpbm file (see encode_image)."""
    return _write(path, encode_image(image), tracker)


# ---------------------------------------------------------------------------
# Label manifests
# ---------------------------------------------------------------------------

def _read_rows(csv_path: PathLike) -> List[List[str]]:
    path = Path(csv_path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return [row for row in csv.reader(f)]
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}", path=str(path)) from e
    except csv.Error as e:
        raise ManifestError(f"Malformed CSV in manifest {path}: {e}", path=str(path)) from e


def _check_header(header: Sequence[str], path: str) -> Tuple[str, ...]:
    if not header or header[0].strip() != "image":
        raise ManifestError("Manifest header must start with 'image'", path=path,
                            errors=["header: first column must be 'image'"])
    codes = tuple(column.strip() for column in header[1:])
    duplicates = sorted({c for c in codes if codes.count(c) > 1})
    if duplicates:
        raise ManifestError("Manifest header repeats class columns", path=path,
                            errors=[f"header: duplicate column '{c}'" for c in duplicates])
    return codes


def read_manifest_header(csv_path: PathLike) -> Tuple[str, ...]:
    """
    Class codes named by a manifest header, in column order.

    Raises:
        ManifestError: If the file is unreadable or the header malformed
    """
    rows = _read_rows(csv_path)
    if not rows:
        raise ManifestError("Manifest is empty", path=str(csv_path))
    return _check_header(rows[0], str(csv_path))


def _find_image(image_dir: Path, name: str) -> Optional[Path]:
    for suffix in (".pgm", ".ppm"):
        candidate = image_dir / f"{name}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def _parse_label(
    fields: Sequence[str], columns: Sequence[int], row: int, errors: List[str]
) -> Optional[np.ndarray]:
    values = []
    for column in columns:
        value = fields[column].strip()
        if value in _TRUE_VALUES:
            values.append(1.0)
        elif value in _FALSE_VALUES:
            values.append(0.0)
        else:
            errors.append(f"row {row}: invalid label value '{value}'")
            return None
    hot = sum(values)
    if hot > 1:
        errors.append(f"row {row}: multi-hot label")
        return None
    if hot == 0:
        errors.append(f"row {row}: no class marked")
        return None
    return np.asarray(values, dtype=np.float32)


def load_manifest(
    csv_path: PathLike,
    image_dir: Optional[PathLike] = None,
    vocab: Optional[ClassVocab] = None,
    require_labels: bool = True,
) -> Dataset:
    """
    Load a labelled dataset from a manifest and its images.

    The header is `image` followed by the class codes. Class columns are
    matched by name, so their order may differ from the vocabulary. When
    labels are not required the header may carry the `image` column alone.

    Args:
        csv_path: Manifest CSV
        image_dir: Directory holding `<image>.pgm` / `<image>.ppm` (default
            `<manifest dir>/images`)
        vocab: Expected vocabulary (default: the header's codes)
        require_labels: Reject a manifest without class columns

    Returns:
        Dataset in manifest row order

    Raises:
        ManifestError: Listing every header or row error found
    """
    path = Path(csv_path)
    rows = _read_rows(path)
    if not rows:
        raise ManifestError("Manifest is empty", path=str(path))
    codes = _check_header(rows[0], str(path))
    if vocab is None:
        vocab = ClassVocab.from_codes(codes) if codes else ClassVocab()

    labelled = bool(codes)
    if labelled:
        header_errors = [f"header: unknown class column '{c}'" for c in codes if c not in vocab.codes]
        header_errors += [f"header: missing class column '{c}'" for c in vocab.codes if c not in codes]
        if header_errors:
            raise ManifestError("Manifest header does not match the class vocabulary",
                                errors=header_errors, path=str(path))
        columns = [1 + codes.index(code) for code in vocab.codes]
    elif require_labels:
        raise ManifestError("Manifest has no class columns", path=str(path),
                            errors=["header: no class columns"])
    else:
        columns = []

    directory = Path(image_dir) if image_dir is not None else path.parent / IMAGES_DIR
    width = 1 + len(codes)
    errors: List[str] = []
    samples: List[Sample] = []
    seen: Dict[str, int] = {}
    first_shape: Optional[Tuple[int, ...]] = None

    for row, fields in enumerate(rows[1:], start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != width:
            errors.append(f"row {row}: expected {width} fields, found {len(fields)}")
            continue
        name = fields[0].strip()
        if not name:
            errors.append(f"row {row}: empty image name")
            continue
        if name in seen:
            errors.append(f"row {row}: duplicate image '{name}' (first at row {seen[name]})")
            continue
        seen[name] = row
        label = _parse_label(fields, columns, row, errors) if labelled else None
        if labelled and label is None:
            continue

        image_path = _find_image(directory, name)
        if image_path is None:
            errors.append(f"row {row}: image file not found for '{name}' in {directory}")
            continue
        try:
            image = load_image(image_path)
        except ImageDecodeError as e:
            errors.append(f"row {row}: {e.message}")
            continue
        if first_shape is None:
            first_shape = image.shape
        elif image.shape != first_shape:
            errors.append(f"row {row}: image shape {image.shape} differs from {first_shape}")
            continue
        samples.append(Sample(name, image, label))

    if errors:
        logger.error(f"Manifest {path} has {len(errors)} errors")
        raise ManifestError(f"Manifest {path} failed to load ({len(errors)} errors)",
                            errors=errors, path=str(path))
    logger.info(f"Loaded {len(samples)} samples from {path}")
    return Dataset.from_samples(samples, vocab)


def encode_manifest(dataset: Dataset) -> str:
    """Manifest CSV text for a dataset, one row per id in dataset order."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    labelled = dataset.has_labels
    writer.writerow(["image", *dataset.vocab.codes] if labelled else ["image"])
    for sample in dataset:
        if labelled:
            writer.writerow([sample.id, *("1" if v == 1.0 else "0" for v in sample.label)])
        else:
            writer.writerow([sample.id])
    return buffer.getvalue()


def write_manifest(dataset: Dataset, csv_path: PathLike, tracker: Optional["ArtifactTracker"] = None) -> Path:
    """Write a dataset's manifest (see encode_manifest)."""
    return _write(csv_path, encode_manifest(dataset).encode("utf-8"), tracker)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

Template = Callable[[np.ndarray, np.ndarray, float, float, float], np.ndarray]


def _disk(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    return (np.hypot(yy - cy, xx - cx) <= 0.3 * r).astype(np.float64)


def _ring(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    d = np.hypot(yy - cy, xx - cx)
    return ((d >= 0.25 * r) & (d <= 0.4 * r)).astype(np.float64)


def _bar(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    return ((np.abs(yy - cy) <= 0.1 * r) & (np.abs(xx - cx) <= 0.4 * r)).astype(np.float64)


def _cross(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    dy, dx = np.abs(yy - cy), np.abs(xx - cx)
    vertical = (dx <= 0.08 * r) & (dy <= 0.4 * r)
    horizontal = (dy <= 0.08 * r) & (dx <= 0.4 * r)
    return (vertical | horizontal).astype(np.float64)


def _checker(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    cell = max(2, int(r) // 7)
    phase_y = np.floor((yy - cy) / cell)
    phase_x = np.floor((xx - cx) / cell)
    return ((phase_y + phase_x) % 2 == 0).astype(np.float64)


def _gradient_blob(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    sigma = 0.2 * r
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))


def _corner_blob(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    h, w = yy.shape
    sigma = 0.15 * r
    oy, ox = cy - (h - 1) / 4, cx - (w - 1) / 4
    return np.exp(-((yy - oy) ** 2 + (xx - ox) ** 2) / (2 * sigma ** 2))


SYNTH_TEMPLATES: Tuple[Template, ...] = (
    _disk, _ring, _bar, _cross, _checker, _gradient_blob, _corner_blob,
)


def render_template(class_index: int, size: Tuple[int, int], offset: Tuple[int, int] = (0, 0)) -> np.ndarray:
    """
    Noise-free H×W rendering of one synthetic class, in [0,1].

    Args:
        class_index: Template index (0..6)
        size: (height, width)
        offset: (dy, dx) shift of the shape center in pixels
    """
    if not 0 <= class_index < len(SYNTH_TEMPLATES):
        raise InputError(f"No synthetic template for class index {class_index}")
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2 + offset[0], (w - 1) / 2 + offset[1]
    return np.clip(SYNTH_TEMPLATES[class_index](yy, xx, cy, cx, float(min(h, w))), 0.0, 1.0)


def generate_synthetic(cfg: SynthConfig, vocab: Optional[ClassVocab] = None) -> Dataset:
    """
    Render the synthetic dataset.

    Each class is a parametric shape (disk, ring, bar, cross, checker,
    gradient blob, corner blob) shifted by a seeded integer jitter, with
    seeded Gaussian noise added and the result clamped to [0,1]. Pixels are
    quantized to 8-bit levels so the netpbm round trip is exact.

    Args:
        cfg: Generator settings
        vocab: Class vocabulary (default ISIC order, at most 7 classes)

    Returns:
        Class-balanced dataset with ids `synth_<CODE>_<k>`, grouped by class
    """
    vocab = vocab or ClassVocab()
    if vocab.num_classes > len(SYNTH_TEMPLATES):
        raise InputError(
            f"Synthetic data supports at most {len(SYNTH_TEMPLATES)} classes",
            {"classes": vocab.num_classes},
        )
    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    samples: List[Sample] = []
    for class_index, code in enumerate(vocab.codes):
        for k in range(cfg.samples_per_class):
            dy, dx = (int(v) for v in rng.integers(-cfg.jitter, cfg.jitter + 1, size=2))
            image = render_template(class_index, cfg.image_size, (dy, dx))
            if cfg.noise_sigma > 0:
                image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)
            levels = np.round(np.clip(image, 0.0, 1.0) * PIXEL_MAXVAL).astype(np.uint8)
            samples.append(Sample(
                f"synth_{code}_{k:03d}",
                scale_pixels(levels[np.newaxis]),
                one_hot(class_index, vocab.num_classes),
            ))
    logger.info(f"Generated {len(samples)} synthetic samples ({cfg.samples_per_class} per class)")
    return Dataset.from_samples(samples, vocab)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def split(
    dataset: Dataset,
    fractions: Sequence[float],
    seed: Union[int, np.random.SeedSequence],
) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Stratified train / validation / test split.

    Each class is shuffled with the seeded generator and cut into
    contiguous pieces of round(fraction · class size) samples (test takes
    the remainder). Within each split, samples keep their dataset order.

    Args:
        dataset: Dataset to split (duplicate ids are collapsed)
        fractions: (train, validation, test), non-negative, summing to 1
        seed: Shuffle seed

    Returns:
        (train, validation, test)

    Raises:
        InputError: If the fractions are invalid
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError("Split fractions must be three non-negative numbers summing to 1",
                         {"fractions": list(fractions)})
    unique = dataset.subset(dataset.unique_ids())
    groups = ids_by_class(unique) if unique.has_labels and len(unique) else [list(unique.ids)]
    rng = np.random.default_rng(seed)
    assignment: Dict[str, int] = {}
    for group in groups:
        n = len(group)
        n_train = min(n, math.floor(fractions[0] * n + 0.5))
        n_val = min(n - n_train, math.floor(fractions[1] * n + 0.5))
        for rank, position in enumerate(rng.permutation(n)):
            part = 0 if rank < n_train else 1 if rank < n_train + n_val else 2
            assignment[group[int(position)]] = part
    parts = tuple(
        unique.subset([sid for sid in unique.ids if assignment[sid] == part]) for part in range(3)
    )
    logger.debug(f"Split {len(unique)} samples into {[len(p) for p in parts]}")
    return parts  # type: ignore[return-value]

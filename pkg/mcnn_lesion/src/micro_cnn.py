#!/usr/bin/env python3
"""
Micro-CNN classifier for mcnn-lesion.

This module provides the small convolutional classifier every ensemble
member is an instance of: building a seeded network from a ModelConfig,
warm-starting a copy, mini-batch SGD training, softmax scoring and the
binary model file format.

Network layout: for every conv block, optional zero padding, a valid
cross-correlation, ReLU and 2×2 max pooling; then an optional hidden dense
layer with ReLU, then the dense head producing one logit per class.
"""

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .config import ModelConfig, SgdConfig
from .constants import MODEL_FORMAT_VERSION, MODEL_MAGIC
from .exceptions import (
    ArtifactError,
    BadMagicError,
    ConfigurationError,
    InputError,
    ModelConfigError,
    ModelFormatError,
    ShapeError,
    TruncatedModelError,
    VersionMismatchError,
)
from .models import Dataset, ScoreMatrix
from .tensor_ops import (
    conv2d_backward,
    conv2d_forward,
    cross_entropy_loss,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_forward,
    pad_same_backward,
    pad_same_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
)

if TYPE_CHECKING:
    from .artifacts import ArtifactTracker

# Configure logging
logger = logging.getLogger("mcnn-lesion.cnn")

SeedLike = Union[int, np.random.SeedSequence]


@dataclass
class Model:
    """
    One micro-CNN.

    Attributes:
        config: Architecture the parameters were built for
        params: Parameter tensors in layer order: (kernels, bias) per conv
            block, then (W, b) of the hidden layer if any, then (W, b) of
            the head
        velocity: Momentum buffers aligned with params
    """
    config: ModelConfig
    params: List[np.ndarray]
    velocity: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in self.params]
        expected = parameter_shapes(self.config)
        actual = [tuple(p.shape) for p in self.params]
        if actual != expected:
            raise ShapeError(
                "Parameter shapes do not match the model config",
                dimension="params", expected=expected, actual=actual,
            )
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p)):
                raise InputError(f"Parameter {i} contains non-finite values")


@dataclass(frozen=True)
class TrainReport:
    """
    Outcome of one train() call.

    Attributes:
        epochs_run: Number of epochs performed
        epoch_losses: Mean cross-entropy per epoch
        train_accuracy: Top-1 accuracy on the training data after the last epoch
    """
    epochs_run: int
    epoch_losses: Tuple[float, ...]
    train_accuracy: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs_run": self.epochs_run,
            "epoch_losses": list(self.epoch_losses),
            "train_accuracy": self.train_accuracy,
        }


def _block_output(
    shape: Tuple[int, int, int], out_channels: int, kernel: int, pad_same: bool, layer: str
) -> Tuple[int, int, int]:
    _, h, w = shape
    if pad_same:
        h += 2 * (kernel // 2)
        w += 2 * (kernel // 2)
    h, w = h - kernel + 1, w - kernel + 1
    if h < 1 or w < 1:
        raise ModelConfigError(
            f"{layer}: kernel {kernel} does not fit a {shape[1]}×{shape[2]} input",
            layer=layer, context={"input": list(shape), "kernel": kernel},
        )
    if h % 2 or w % 2:
        raise ModelConfigError(
            f"{layer}: convolution output {h}×{w} cannot be max-pooled by 2",
            layer=layer, context={"input": list(shape), "kernel": kernel},
        )
    return out_channels, h // 2, w // 2


def feature_shapes(cfg: ModelConfig) -> List[Tuple[int, int, int]]:
    """
    Activation shapes after each conv block, starting with the input.

    Raises:
        ModelConfigError: If a block's spatial arithmetic is invalid
    """
    shapes = [tuple(cfg.input_shape)]
    for i, (channels, kernel) in enumerate(cfg.conv_blocks, start=1):
        shapes.append(_block_output(shapes[-1], channels, kernel, cfg.pad_same, f"conv_block_{i}"))
    return shapes  # type: ignore[return-value]


def parameter_shapes(cfg: ModelConfig) -> List[Tuple[int, ...]]:
    """Shapes of every parameter tensor, in layer order."""
    shapes: List[Tuple[int, ...]] = []
    features = feature_shapes(cfg)
    for (in_channels, _, _), (channels, kernel) in zip(features, cfg.conv_blocks):
        shapes.append((channels, in_channels, kernel, kernel))
        shapes.append((channels,))
    width = int(np.prod(features[-1]))
    if cfg.hidden_dense is not None:
        shapes.append((cfg.hidden_dense, width))
        shapes.append((cfg.hidden_dense,))
        width = cfg.hidden_dense
    shapes.append((cfg.num_classes, width))
    shapes.append((cfg.num_classes,))
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    """Total number of scalar parameters of an architecture."""
    return sum(int(np.prod(shape)) for shape in parameter_shapes(cfg))


def build_model(cfg: ModelConfig) -> Model:
    """
    Build a freshly initialized model.

    Weights are drawn from N(0, 2/fan_in) with a generator seeded by
    cfg.seed; biases and velocity start at zero.

    Args:
        cfg: Architecture and seed

    Returns:
        The new model

    Raises:
        ModelConfigError: If the spatial arithmetic fails, naming the layer
    """
    rng = np.random.default_rng(cfg.seed)
    params: List[np.ndarray] = []
    for shape in parameter_shapes(cfg):
        if len(shape) == 1:
            params.append(np.zeros(shape, dtype=np.float32))
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            params.append((rng.standard_normal(shape) * std).astype(np.float32))
    model = Model(cfg, params)
    logger.info(f"Built micro-CNN with {parameter_count(cfg)} parameters (seed {cfg.seed})")
    return model


def warm_start(base: Model) -> Model:
    """Independent copy of a model's parameters with zeroed velocity."""
    return Model(base.config, [p.copy() for p in base.params])


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _BlockCache:
    conv_input: np.ndarray
    conv_output: np.ndarray
    pool_indices: np.ndarray


@dataclass
class _ForwardCache:
    blocks: List[_BlockCache]
    feature_shape: Tuple[int, ...]
    flat: np.ndarray
    hidden_pre: Optional[np.ndarray]
    head_input: np.ndarray


def _forward(model: Model, x: np.ndarray) -> Tuple[np.ndarray, _ForwardCache]:
    cfg = model.config
    params = model.params
    blocks: List[_BlockCache] = []
    for i, (_, kernel) in enumerate(cfg.conv_blocks):
        conv_input = pad_same_forward(x, kernel) if cfg.pad_same else x
        conv_output = conv2d_forward(conv_input, params[2 * i], params[2 * i + 1])
        x, indices = maxpool2_forward(relu_forward(conv_output))
        blocks.append(_BlockCache(conv_input, conv_output, indices))

    feature_shape = x.shape
    flat = x.reshape(x.shape[0], -1)
    offset = 2 * len(cfg.conv_blocks)
    hidden_pre = None
    head_input = flat
    if cfg.hidden_dense is not None:
        hidden_pre = dense_forward(flat, params[offset], params[offset + 1])
        head_input = relu_forward(hidden_pre)
        offset += 2
    logits = dense_forward(head_input, params[offset], params[offset + 1])
    return logits, _ForwardCache(blocks, feature_shape, flat, hidden_pre, head_input)


def _backward(model: Model, cache: _ForwardCache, grad_logits: np.ndarray) -> List[np.ndarray]:
    cfg = model.config
    params = model.params
    grads: List[np.ndarray] = [np.empty(0)] * len(params)

    offset = len(params) - 2
    head = dense_backward(cache.head_input, params[offset], grad_logits)
    grads[offset], grads[offset + 1] = head.param_grads
    upstream = head.input_grad
    if cfg.hidden_dense is not None:
        offset -= 2
        upstream = relu_backward(cache.hidden_pre, upstream)
        hidden = dense_backward(cache.flat, params[offset], upstream)
        grads[offset], grads[offset + 1] = hidden.param_grads
        upstream = hidden.input_grad

    upstream = upstream.reshape(cache.feature_shape)
    for i in reversed(range(len(cfg.conv_blocks))):
        block = cache.blocks[i]
        upstream = maxpool2_backward(block.pool_indices, upstream)
        upstream = relu_backward(block.conv_output, upstream)
        conv = conv2d_backward(block.conv_input, params[2 * i], upstream)
        grads[2 * i], grads[2 * i + 1] = conv.param_grads
        upstream = conv.input_grad
        if cfg.pad_same:
            upstream = pad_same_backward(upstream, cfg.conv_blocks[i][1])
    return grads


def _check_input_shape(model: Model, data: Dataset) -> None:
    expected = tuple(model.config.input_shape)
    if data.image_shape != expected:
        raise ShapeError(
            "Image shape does not match the model input shape",
            dimension="input_shape", expected=expected, actual=data.image_shape,
        )


def train(
    model: Model,
    data: Dataset,
    epochs: int,
    batch_size: int,
    sgd: SgdConfig,
    seed: SeedLike,
) -> TrainReport:
    """
    Train a model in place with mini-batch SGD and momentum.

    Every epoch visits the samples in a fresh order drawn from a generator
    seeded once per call, so (model, data, epochs, seed) determine the
    final weights.

    Args:
        model: Model to update
        data: Labelled training data (duplicates allowed)
        epochs: Number of passes over the data
        batch_size: Samples per update
        sgd: Optimizer settings
        seed: Shuffle seed

    Returns:
        TrainReport with per-epoch mean losses and the final train accuracy

    Raises:
        InputError: If data is empty or unlabelled, or epochs < 1
    """
    if len(data) == 0:
        raise InputError("Cannot train on an empty dataset")
    if epochs < 1:
        raise InputError("epochs must be at least 1", {"epochs": epochs})
    if batch_size < 1:
        raise InputError("batch_size must be at least 1", {"batch_size": batch_size})
    _check_input_shape(model, data)

    images = data.images()
    targets = data.one_hot_labels()
    if targets.shape[1] != model.config.num_classes:
        raise ShapeError(
            "Label width does not match the model's class count",
            dimension="num_classes", expected=model.config.num_classes, actual=targets.shape[1],
        )
    rng = np.random.default_rng(seed)
    n = len(data)
    losses: List[float] = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits, cache = _forward(model, images[idx])
            loss, grad_logits = cross_entropy_loss(softmax(logits), targets[idx])
            total += loss * len(idx)
            grads = _backward(model, cache, grad_logits)
            model.params, model.velocity = sgd_step(model.params, grads, model.velocity, sgd)
        losses.append(total / n)
        logger.debug(f"Epoch {epoch}/{epochs}: mean loss {losses[-1]:.6f}")

    scores = predict_scores(model, data)
    predicted = np.argmax(scores.rows, axis=1)
    accuracy = float(np.mean(predicted == data.label_vector().classes))
    logger.info(f"Trained {epochs} epochs on {n} samples: loss {losses[-1]:.4f}, accuracy {accuracy:.4f}")
    return TrainReport(epochs, tuple(losses), accuracy)


def _score_chunk(model: Model, images: np.ndarray) -> np.ndarray:
    # one sample at a time so a row never depends on its neighbours
    return np.stack([softmax(_forward(model, image[np.newaxis])[0][0]) for image in images])


def predict_scores(model: Model, batch: Dataset, workers: int = 1) -> ScoreMatrix:
    """
    Softmax scores for every sample of a batch.

    The model is not modified. Rows are computed per sample, so splitting
    the batch over worker threads gives bitwise-identical results.

    Args:
        model: Trained model
        batch: Samples to score (labels not needed)
        workers: Number of scoring threads

    Returns:
        ScoreMatrix with one row per batch id, in batch order

    Raises:
        ShapeError: If the image shape does not match the model
    """
    if len(batch) == 0:
        return ScoreMatrix((), np.zeros((0, model.config.num_classes)))
    _check_input_shape(model, batch)
    images = batch.images()
    if workers <= 1 or len(images) < 2:
        rows = _score_chunk(model, images)
    else:
        chunks = np.array_split(images, min(workers, len(images)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = np.concatenate(list(pool.map(lambda c: _score_chunk(model, c), chunks)))
    return ScoreMatrix(batch.ids, rows.astype(np.float64))


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------

def encode_model(model: Model) -> bytes:
    """
    Serialize a model.

    Layout (little-endian): magic "MCNN", u16 format version, u32 length and
    UTF-8 JSON of the ModelConfig, u32 tensor count, then per tensor a u8
    rank, rank × u32 dims and the float32 data.
    """
    config_json = json.dumps(model.config.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    parts = [
        MODEL_MAGIC,
        struct.pack("<H", MODEL_FORMAT_VERSION),
        struct.pack("<I", len(config_json)),
        config_json,
        struct.pack("<I", len(model.params)),
    ]
    for p in model.params:
        parts.append(struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path: Optional[str]) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise TruncatedModelError(
                f"Model file truncated while reading {what}",
                path=self.path,
                context={"offset": self.offset, "needed": size, "available": len(self.data) - self.offset},
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_model(data: bytes, path: Optional[str] = None) -> Model:
    """
    Parse bytes produced by encode_model.

    Raises:
        BadMagicError: If the magic bytes are wrong
        VersionMismatchError: If the format version is unsupported
        TruncatedModelError: If the data ends early
        ModelFormatError: For any other inconsistency (bad config, shapes,
            trailing bytes)
    """
    reader = _Reader(data, path)
    magic = reader.take(len(MODEL_MAGIC), "magic")
    if magic != MODEL_MAGIC:
        raise BadMagicError(f"Bad magic bytes {magic!r}, expected {MODEL_MAGIC!r}", path=path)
    (version,) = reader.unpack("<H", "format version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"Unsupported model format version {version}, expected {MODEL_FORMAT_VERSION}",
            path=path, context={"version": version},
        )
    (config_length,) = reader.unpack("<I", "config length")
    config_bytes = reader.take(config_length, "config")
    try:
        cfg = ModelConfig.model_validate(json.loads(config_bytes.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as e:
        raise ModelFormatError(f"Model config is unreadable: {e}", path=path) from e

    (count,) = reader.unpack("<I", "tensor count")
    params: List[np.ndarray] = []
    for i in range(count):
        (rank,) = reader.unpack("<B", f"rank of tensor {i}")
        dims = reader.unpack(f"<{rank}I", f"dims of tensor {i}")
        size = int(np.prod(dims)) if dims else 1
        raw = reader.take(4 * size, f"data of tensor {i}")
        params.append(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims))
    if reader.offset != len(data):
        raise ModelFormatError(
            "Model file has trailing bytes",
            path=path, context={"trailing": len(data) - reader.offset},
        )
    try:
        return Model(cfg, params)
    except (InputError, ConfigurationError) as e:
        raise ModelFormatError(f"Model tensors are inconsistent: {e.message}", path=path,
                               context=e.context) from e


def save_model(model: Model, path: Union[str, Path], tracker: Optional["ArtifactTracker"] = None) -> Path:
    """
    Write a model file.

    Args:
        model: Model to save
        path: Destination
        tracker: Optional artifact tracker; the write is recorded for rollback

    Returns:
        The written path

    Raises:
        ArtifactError: If the file cannot be written
    """
    data = encode_model(model)
    if tracker is not None:
        return tracker.write_bytes(path, data)
    target = Path(path)
    try:
        target.write_bytes(data)
    except OSError as e:
        raise ArtifactError(f"Cannot write model {target}: {e}", artifact=str(target)) from e
    logger.debug(f"Saved model to {target} ({len(data)} bytes)")
    return target


def load_model(path: Union[str, Path]) -> Model:
    """
    Read a model file.

    Raises:
        ModelFormatError: If the file is missing or cannot be decoded
    """
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as e:
        raise ModelFormatError(f"Cannot read model file {target}: {e}", path=str(target)) from e
    return decode_model(data, str(target))


def parameters_equal(a: Model, b: Model) -> bool:
    """Bitwise equality of two models' parameters."""
    return len(a.params) == len(b.params) and all(
        x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a.params, b.params)
    )


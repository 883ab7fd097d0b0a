#!/usr/bin/env python3
"""
Configuration management for mcnn-lesion.

This module defines the configuration models for every component (optimizer,
network architecture, additive ensemble, synthetic data, run) and handles
loading, validating and saving run configurations. Values are resolved in
the order defaults ← configuration file ← command-line flags.
"""

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CLASS_CODES,
    DEFAULT_EPOCHS_FIRST,
    DEFAULT_EPOCHS_REST,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_MODELS,
    DEFAULT_MIN_HARD_SET,
    DEFAULT_MOMENTUM,
    DEFAULT_THRESHOLD,
    RESOLVED_CONFIG_JSON,
)
from .exceptions import ConfigurationError
from .models import NextSetMode, SelectionPredicate

if TYPE_CHECKING:
    from .artifacts import ArtifactTracker

# Configure logging
logger = logging.getLogger("mcnn-lesion.config")

CONFIG_VERSION = "1.0"


class _FrozenModel(BaseModel):
    """Common settings: immutable, unknown keys rejected."""
    model_config = ConfigDict(extra="forbid", frozen=True)


class SgdConfig(_FrozenModel):
    """
    Stochastic gradient descent with momentum.

    Attributes:
        learning_rate: Step size (0 freezes the parameters)
        momentum: Velocity decay in [0, 1)
    """
    learning_rate: float = Field(DEFAULT_LEARNING_RATE, ge=0.0)
    momentum: float = Field(DEFAULT_MOMENTUM, ge=0.0, lt=1.0)


class ModelConfig(_FrozenModel):
    """
    Micro-CNN architecture.

    Attributes:
        input_shape: (channels, height, width) of the input images
        conv_blocks: (out_channels, kernel_size) per block; each block is
            conv → ReLU → 2×2 max pool
        hidden_dense: Optional width of a hidden dense layer before the head
        num_classes: Output classes
        pad_same: Zero-pad each block input by kernel_size // 2
        seed: Seed of the weight initializer
    """
    input_shape: Tuple[int, int, int] = (1, 28, 28)
    conv_blocks: Tuple[Tuple[int, int], ...] = ((8, 3), (16, 3))
    hidden_dense: Optional[int] = Field(None, ge=1)
    num_classes: int = Field(7, ge=2)
    pad_same: bool = True
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("input_shape")
    @classmethod
    def _positive_shape(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(dim < 1 for dim in value):
            raise ValueError(f"input_shape dimensions must be positive, got {value}")
        return value

    @field_validator("conv_blocks")
    @classmethod
    def _positive_blocks(cls, value: Tuple[Tuple[int, int], ...]) -> Tuple[Tuple[int, int], ...]:
        for channels, kernel in value:
            if channels < 1 or kernel < 1:
                raise ValueError(f"conv block sizes must be positive, got {(channels, kernel)}")
        return value


class EnsembleConfig(_FrozenModel):
    """
    Additive-sample ensemble training.

    Attributes:
        threshold: Top-score threshold below which a sample is hard
        max_models: Upper bound on the ensemble size
        selection_predicate: score_only or score_or_wrong
        next_set_mode: hard_only or full_plus_duplicates
        min_hard_set: Stop when fewer samples are selected
        epochs_first: Epochs for the first model
        epochs_rest: Epochs for every later model
        batch_size: Mini-batch size
        sgd: Optimizer settings
    """
    threshold: float = Field(DEFAULT_THRESHOLD, gt=0.0, le=1.0)
    max_models: int = Field(DEFAULT_MAX_MODELS, ge=1)
    selection_predicate: SelectionPredicate = SelectionPredicate.SCORE_OR_WRONG
    next_set_mode: NextSetMode = NextSetMode.HARD_ONLY
    min_hard_set: int = Field(DEFAULT_MIN_HARD_SET, ge=0)
    epochs_first: int = Field(DEFAULT_EPOCHS_FIRST, ge=1)
    epochs_rest: int = Field(DEFAULT_EPOCHS_REST, ge=1)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1)
    sgd: SgdConfig = Field(default_factory=SgdConfig)


class SynthConfig(_FrozenModel):
    """
    Synthetic seven-class dataset.

    Attributes:
        samples_per_class: Samples generated for every class
        image_size: (height, width), both divisible by 4
        noise_sigma: Standard deviation of additive Gaussian noise
        jitter: Maximum shape offset in pixels
        seed: Generator seed (inherits the run seed when omitted)
    """
    samples_per_class: int = Field(10, ge=1)
    image_size: Tuple[int, int] = (28, 28)
    noise_sigma: float = Field(0.0, ge=0.0)
    jitter: int = Field(1, ge=0)
    seed: Optional[int] = Field(None, ge=0)

    @field_validator("image_size")
    @classmethod
    def _divisible_by_four(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if any(dim < 4 or dim % 4 for dim in value):
            raise ValueError(f"image_size must be positive multiples of 4, got {value}")
        return value


class DataConfig(_FrozenModel):
    """
    Data source of a run: a manifest on disk, or the synthetic generator.

    Attributes:
        manifest: Path of a label manifest CSV; None selects synthetic data
        image_dir: Directory holding the manifest images
        class_codes: Class columns a training manifest must carry, in
            vocabulary order
        synth: Synthetic generator settings
        split: (train, validation, test) fractions
    """
    manifest: Optional[str] = None
    image_dir: Optional[str] = None
    class_codes: Tuple[str, ...] = DEFAULT_CLASS_CODES
    synth: SynthConfig = Field(default_factory=SynthConfig)
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    @field_validator("class_codes")
    @classmethod
    def _distinct_codes(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(value) < 2 or len(set(value)) != len(value) or not all(code.strip() for code in value):
            raise ValueError(f"class_codes must be at least two distinct non-empty codes, got {list(value)}")
        return value

    @field_validator("split")
    @classmethod
    def _fractions(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(f < 0 for f in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {value}")
        return value


class RunConfig(_FrozenModel):
    """
    Everything a CLI run needs.

    Attributes:
        config_version: Version of the configuration format
        seed: Master seed
        out_dir: Output directory
        data: Data source
        model: Network architecture
        ensemble: Ensemble training settings
    """
    config_version: str = CONFIG_VERSION
    seed: int = Field(42, ge=0, lt=2**64)
    out_dir: str = "runs/mcnn"
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)

    @model_validator(mode="after")
    def _consistent_shapes(self) -> "RunConfig":
        if self.data.manifest is None and self.model.input_shape[1:] != self.data.synth.image_size:
            raise ValueError(
                f"model.input_shape {self.model.input_shape} does not match "
                f"data.synth.image_size {self.data.synth.image_size}"
            )
        if self.model.num_classes != len(self.data.class_codes):
            raise ValueError(
                f"model.num_classes {self.model.num_classes} does not match "
                f"the {len(self.data.class_codes)} data.class_codes"
            )
        return self


def _validation_error(error: ValidationError, source: str) -> ConfigurationError:
    """Turn the first pydantic error into a ConfigurationError naming the key."""
    first = error.errors()[0]
    key = ".".join(str(part) for part in first.get("loc", ()))
    return ConfigurationError(
        f"Invalid configuration in {source}: {key}: {first.get('msg')}",
        config_key=key or None,
        config_value=first.get("input") if first.get("type") != "missing" else None,
    )


def _deep_merge(base: Dict[str, Any], updates: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_from_file(file_path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a JSON configuration document.

    Args:
        file_path: Path to the configuration file

    Returns:
        The raw JSON object

    Raises:
        ConfigurationError: If the file is missing, unreadable or not a JSON object
    """
    path = Path(file_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Configuration file not found: {path}") from e
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON in configuration file {path}: {e}")
        raise ConfigurationError(f"Invalid JSON in configuration file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration file {path} must hold a JSON object")
    logger.debug(f"Configuration loaded from file:{path}")
    return data


def load_run_config(
    file_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load a run configuration from all sources.

    Defaults are filled for missing keys, the file (if any) replaces them,
    and overrides (nested dicts, as produced from CLI flags) win over both.

    Args:
        file_path: Optional JSON configuration file
        overrides: Optional nested overrides

    Returns:
        The validated, resolved RunConfig

    Raises:
        ConfigurationError: If any source is invalid
    """
    raw: Dict[str, Any] = {}
    sources = ["defaults"]
    if file_path is not None:
        raw = load_from_file(file_path)
        sources.append(f"file:{file_path}")
    if overrides:
        raw = _deep_merge(raw, overrides)
        sources.append("flags")

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise _validation_error(e, ", ".join(sources)) from e

    logger.info(f"Configuration loaded from sources: {', '.join(sources)}")
    return resolve_run_config(config)


def resolve_run_config(config: RunConfig) -> RunConfig:
    """
    Make every inherited value explicit.

    The synthetic generator seed and the model initializer seed default to
    the run seed; the resolved document spells them out so that feeding it
    back reproduces the identical run.

    Args:
        config: A validated run configuration

    Returns:
        The fully explicit configuration
    """
    synth = config.data.synth
    if synth.seed is None:
        synth = synth.model_copy(update={"seed": config.seed})
    model = config.model
    if "seed" not in config.model.model_fields_set:
        model = model.model_copy(update={"seed": config.seed})
    data = config.data.model_copy(update={"synth": synth})
    return RunConfig.model_validate(
        config.model_copy(update={"data": data, "model": model}).model_dump(mode="json")
    )


def config_to_dict(config: BaseModel) -> Dict[str, Any]:
    """JSON-ready dictionary of any configuration model."""
    return config.model_dump(mode="json")


def save_config(
    config: RunConfig, file_path: Union[str, Path], tracker: Optional["ArtifactTracker"] = None
) -> Path:
    """
    Save a run configuration as indented JSON.

    Args:
        config: Configuration object to save
        file_path: Destination path
        tracker: Optional artifact tracker; the write is recorded for rollback

    Returns:
        The written path

    Raises:
        ConfigurationError: If the file cannot be written
        ArtifactError: If the tracked write fails
    """
    if tracker is not None:
        return tracker.write_text(file_path, dump_config_json(config))
    path = Path(file_path)
    try:
        path.write_text(dump_config_json(config), encoding="utf-8")
    except OSError as e:
        logger.error(f"Error saving configuration to {path}: {e}")
        raise ConfigurationError(f"Error saving configuration to {path}: {e}") from e
    logger.debug(f"Configuration saved to {path}")
    return path


def dump_config_json(config: BaseModel) -> str:
    """Stable JSON text of a configuration model."""
    return json.dumps(config_to_dict(config), indent=2) + "\n"


def resolved_config_path(out_dir: Union[str, Path]) -> Path:
    return Path(out_dir) / RESOLVED_CONFIG_JSON

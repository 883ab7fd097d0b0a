"""
Configuration for pytest.
"""
import os
import sys
from typing import Callable

import numpy as np
import pytest

# Add the parent directory to the Python path
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from mcnn_lesion.src.config import ModelConfig, SynthConfig  # noqa: E402
from mcnn_lesion.src.data_io import generate_synthetic  # noqa: E402
from mcnn_lesion.src.models import Dataset  # noqa: E402


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + h
        plus = f(x)
        x[idx] = original - h
        minus = f(x)
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error between two gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """One conv block on 8×8 grayscale images."""
    return ModelConfig(input_shape=(1, 8, 8), conv_blocks=((4, 3),), num_classes=7, seed=3)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Noise-free synthetic 8×8 dataset, 4 samples per class."""
    return generate_synthetic(SynthConfig(samples_per_class=4, image_size=(8, 8), seed=11))


@pytest.fixture
def synth_dataset() -> Dataset:
    """Noise-free synthetic 28×28 dataset, 10 samples per class."""
    return generate_synthetic(SynthConfig(samples_per_class=10, seed=42))

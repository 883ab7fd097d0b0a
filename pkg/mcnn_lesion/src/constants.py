#!/usr/bin/env python3
"""
Constants for mcnn-lesion.

This module defines constants used throughout the package, ensuring
consistent values across the numeric core, the file formats and the CLI.
"""

# Root logger name; every module logs under "mcnn-lesion.<component>"
LOGGER_NAME = "mcnn-lesion"

# Model binary format
MODEL_MAGIC = b"MCNN"
MODEL_FORMAT_VERSION = 1
MODEL_FILE_PATTERN = "model_{index:03d}.mcnn"

# Ensemble directory layout
ENSEMBLE_FORMAT_VERSION = 1
ENSEMBLE_JSON = "ensemble.json"
RESOLVED_CONFIG_JSON = "resolved_config.json"
TRAINING_SUMMARY_JSON = "training_summary.json"
METRICS_JSON = "metrics.json"
ROC_CSV_PATTERN = "roc_{code}.csv"
ROC_SVG = "roc.svg"

# Dataset layout written by the synth command
MANIFEST_CSV = "manifest.csv"
IMAGES_DIR = "images"
DATA_DIR = "data"
SPLIT_NAMES = ("train", "validation", "test")

# ISIC task-3 class order, with display names
DEFAULT_CLASS_CODES = ("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC")
DEFAULT_CLASS_NAMES = (
    "Melanoma",
    "Melanocytic nevus",
    "Basal cell carcinoma",
    "Actinic keratosis / intraepithelial carcinoma",
    "Benign keratosis",
    "Dermatofibroma",
    "Vascular lesion",
)

# Additive sample selection
DEFAULT_THRESHOLD = 0.9
DEFAULT_MAX_MODELS = 5
DEFAULT_MIN_HARD_SET = 8

# Training defaults
DEFAULT_EPOCHS_FIRST = 5
DEFAULT_EPOCHS_REST = 10
DEFAULT_BATCH_SIZE = 16
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_MOMENTUM = 0.9

# Probability rows must sum to 1 within this tolerance
ROW_SUM_TOLERANCE = 1e-6

# Netpbm
PIXEL_MAXVAL = 255

# Exit codes for the CLI
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_FORMAT = 4
EXIT_ARTIFACT = 5
